#include "apnet/checkpoint.hpp"

#include <set>

#include "binary_io.hpp"
#include "json.hpp"

namespace apnet::io {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "APNT";

json resnet_json(const nn::ResNetConfig& r) {
  return {{"channels", r.channels},
          {"kernel_sizes", r.kernel_sizes},
          {"dilations", r.dilations},
          {"lrelu_slope", r.lrelu_slope}};
}

nn::ResNetConfig resnet_from(const json& j) {
  nn::ResNetConfig r;
  r.channels = j.at("channels").get<int>();
  r.kernel_sizes = j.at("kernel_sizes").get<std::vector<int>>();
  r.dilations = j.at("dilations").get<std::vector<std::vector<int>>>();
  r.lrelu_slope = j.at("lrelu_slope").get<double>();
  return r;
}

const char* window_name(dsp::WindowKind w) { return w == dsp::WindowKind::Hann ? "hann" : "rectangular"; }

dsp::WindowKind window_from(const std::string& s) {
  if (s == "hann") return dsp::WindowKind::Hann;
  if (s == "rectangular") return dsp::WindowKind::Rectangular;
  fail(ErrorKind::Format, "unknown window kind '" + s + "'");
}

json config_json(const nn::ApnetConfig& c) {
  return {{"mel_dim", c.mel_dim},
          {"spec_bins", c.spec_bins},
          {"input_kernel", c.input_kernel},
          {"output_kernel", c.output_kernel},
          {"asp", resnet_json(c.asp)},
          {"psp", resnet_json(c.psp)},
          {"stft",
           {{"sample_rate", c.stft.sample_rate},
            {"frame_length", c.stft.frame_length},
            {"frame_shift", c.stft.frame_shift},
            {"fft_size", c.stft.fft_size},
            {"window", window_name(c.stft.window)}}},
          {"mel",
           {{"num_mels", c.mel.num_mels},
            {"f_min", c.mel.f_min},
            {"f_max", c.mel.f_max},
            {"log_floor", c.mel.log_floor}}}};
}

nn::ApnetConfig config_from(const json& j) {
  nn::ApnetConfig c;
  c.mel_dim = j.at("mel_dim").get<int>();
  c.spec_bins = j.at("spec_bins").get<int>();
  c.input_kernel = j.at("input_kernel").get<int>();
  c.output_kernel = j.at("output_kernel").get<int>();
  c.asp = resnet_from(j.at("asp"));
  c.psp = resnet_from(j.at("psp"));
  const json& s = j.at("stft");
  c.stft.sample_rate = s.at("sample_rate").get<int>();
  c.stft.frame_length = s.at("frame_length").get<int>();
  c.stft.frame_shift = s.at("frame_shift").get<int>();
  c.stft.fft_size = s.at("fft_size").get<int>();
  c.stft.window = window_from(s.at("window").get<std::string>());
  const json& m = j.at("mel");
  c.mel.num_mels = m.at("num_mels").get<int>();
  c.mel.f_min = m.at("f_min").get<double>();
  c.mel.f_max = m.at("f_max").get<double>();
  c.mel.log_floor = m.at("log_floor").get<double>();
  return c;
}

json train_json(const train::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"lr_decay", t.lr_decay},
          {"beta1", t.beta1},                 {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},           {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},       {"segment_samples", t.segment_samples},
          {"epochs", t.epochs},               {"max_steps", t.max_steps},
          {"seed", t.seed},                   {"checkpoint_every", t.checkpoint_every}};
}

train::TrainConfig train_from(const json& j) {
  train::TrainConfig t;
  t.learning_rate = j.at("learning_rate").get<double>();
  t.lr_decay = j.at("lr_decay").get<double>();
  t.beta1 = j.at("beta1").get<double>();
  t.beta2 = j.at("beta2").get<double>();
  t.adam_eps = j.at("adam_eps").get<double>();
  t.weight_decay = j.at("weight_decay").get<double>();
  t.batch_size = j.at("batch_size").get<int>();
  t.segment_samples = j.at("segment_samples").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.max_steps = j.at("max_steps").get<std::int64_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.checkpoint_every = j.at("checkpoint_every").get<int>();
  return t;
}

json loss_json(const loss::LossWeights& w) {
  return {{"lambda_a", w.lambda_a},
          {"lambda_p", w.lambda_p},
          {"lambda_s", w.lambda_s},
          {"lambda_ri", w.lambda_ri},
          {"lambda_mel", w.lambda_mel}};
}

loss::LossWeights loss_from(const json& j) {
  loss::LossWeights w;
  w.lambda_a = j.at("lambda_a").get<double>();
  w.lambda_p = j.at("lambda_p").get<double>();
  w.lambda_s = j.at("lambda_s").get<double>();
  w.lambda_ri = j.at("lambda_ri").get<double>();
  w.lambda_mel = j.at("lambda_mel").get<double>();
  return w;
}

void write_tensor(detail::Writer& w, const std::string& name, const ad::DiffTensor<float>& t) {
  w.str(name);
  w.u32(static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t d : t.shape) w.u32(static_cast<std::uint32_t>(d));
  for (float v : t.values) w.f32(v);
}

}  // namespace

std::string config_to_json(const nn::ApnetConfig& cfg) { return config_json(cfg).dump(); }

nn::ApnetConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("model configuration: ") + e.what());
  }
}

std::vector<std::string> config_differences(const nn::ApnetConfig& a, const nn::ApnetConfig& b) {
  const json fa = config_json(a).flatten();
  const json fb = config_json(b).flatten();
  std::set<std::string> names;
  for (const auto& [k, v] : fa.items()) {
    auto it = fb.find(k);
    if (it == fb.end() || *it != v) names.insert(k);
  }
  for (const auto& [k, v] : fb.items())
    if (!fa.contains(k)) names.insert(k);
  // "/asp/dilations/0/1" -> "asp.dilations"
  std::set<std::string> fields;
  for (const std::string& k : names) {
    std::string out;
    std::size_t pos = 1;
    while (pos <= k.size()) {
      const std::size_t next = std::min(k.find('/', pos), k.size());
      const std::string part = k.substr(pos, next - pos);
      if (!part.empty() && !std::isdigit(static_cast<unsigned char>(part[0]))) out += (out.empty() ? "" : ".") + part;
      pos = next + 1;
    }
    fields.insert(out);
  }
  return {fields.begin(), fields.end()};
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["format"] = "apnet-checkpoint";
  header["config"] = config_json(ckpt.config);
  header["step"] = ckpt.step;
  header["epoch"] = ckpt.epoch;
  header["rng_state"] = ckpt.rng_state;
  header["train"] = ckpt.train_config ? train_json(*ckpt.train_config) : json();
  header["loss"] = ckpt.loss_weights ? loss_json(*ckpt.loss_weights) : json();
  json names = json::array();
  for (const auto& kv : ckpt.weights.tensors) names.push_back(kv.first);
  header["tensors"] = names;
  if (ckpt.optimizer) {
    header["optimizer"] = {{"type", "adamw"}, {"step", ckpt.optimizer->step}, {"moments", {"adam.m/", "adam.v/"}}};
  } else {
    header["optimizer"] = json();
  }

  detail::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  for (const auto& [name, t] : ckpt.weights.tensors) write_tensor(w, name, t);
  if (ckpt.optimizer) {
    for (const auto& [name, t] : ckpt.weights.tensors) {
      const auto m = ckpt.optimizer->m.find(name);
      const auto v = ckpt.optimizer->v.find(name);
      require(m != ckpt.optimizer->m.end() && v != ckpt.optimizer->v.end(), ErrorKind::InvalidInput,
              "optimizer state lacks moments for '" + name + "'");
      write_tensor(w, "adam.m/" + name, m->second);
      write_tensor(w, "adam.v/" + name, v->second);
    }
  }
  w.save(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = detail::Reader::from_file(path);
  const std::string where = "checkpoint '" + path.string() + "'";
  if (r.remaining() < 4 || r.fourcc() != "APNT") fail(ErrorKind::Format, where + ": not an APNT file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorKind::Format, where + ": unsupported version " + std::to_string(version));

  Checkpoint ck;
  json header;
  try {
    header = json::parse(r.str());
    ck.config = config_from(header.at("config"));
    ck.step = header.at("step").get<std::int64_t>();
    ck.epoch = header.at("epoch").get<std::int64_t>();
    ck.rng_state = header.at("rng_state").get<std::string>();
    if (!header.at("train").is_null()) ck.train_config = train_from(header.at("train"));
    if (!header.at("loss").is_null()) ck.loss_weights = loss_from(header.at("loss"));
    if (!header.at("optimizer").is_null()) {
      ck.optimizer.emplace();
      ck.optimizer->step = header.at("optimizer").at("step").get<std::int64_t>();
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, where + ": bad header: " + e.what());
  }
  try {
    ck.config.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, where + ": header configuration invalid: " + e.what());
  }

  const auto expected = nn::weight_shapes(ck.config);
  while (!r.done()) {
    const std::string name = r.str(4096);
    const std::uint32_t rank = r.u32();
    if (rank > 8) fail(ErrorKind::Format, where + ": tensor '" + name + "' has implausible rank");
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t count = ad::element_count(shape);
    if (count * 4 > r.remaining())
      fail(ErrorKind::Format, where + ": tensor '" + name + "' payload is truncated");

    std::string base = name;
    std::map<std::string, ad::DiffTensor<float>>* dest = &ck.weights.tensors;
    if (name.rfind("adam.m/", 0) == 0 || name.rfind("adam.v/", 0) == 0) {
      if (!ck.optimizer) fail(ErrorKind::Format, where + ": optimizer tensor '" + name + "' without optimizer state");
      dest = name[5] == 'm' ? &ck.optimizer->m : &ck.optimizer->v;
      base = name.substr(7);
    }
    const auto it = expected.find(base);
    if (it == expected.end()) fail(ErrorKind::Format, where + ": unexpected tensor '" + name + "'");
    if (it->second != shape)
      fail(ErrorKind::Format, where + ": tensor '" + name + "' has shape " + ad::shape_string(shape) +
                                  ", configuration requires " + ad::shape_string(it->second));
    if (dest->count(base)) fail(ErrorKind::Format, where + ": duplicate tensor '" + name + "'");
    ad::DiffTensor<float> t(shape);
    for (float& v : t.values) v = r.f32();
    dest->emplace(base, std::move(t));
  }

  for (const auto& [name, shape] : expected) {
    if (!ck.weights.tensors.count(name)) fail(ErrorKind::Format, where + ": missing tensor '" + name + "'");
    if (ck.optimizer && (!ck.optimizer->m.count(name) || !ck.optimizer->v.count(name)))
      fail(ErrorKind::Format, where + ": missing optimizer moments for '" + name + "'");
  }
  return ck;
}

}  // namespace apnet::io
