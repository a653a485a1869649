#include "apnet/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "apnet/error.hpp"
#include "json.hpp"

namespace apnet::config {

using nlohmann::json;

namespace {

struct Key {
  std::string name;
  std::function<json(const Settings&)> get;
  std::function<void(Settings&, const json&)> set;
};

int as_int(const json& v) {
  if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
  return v.get<int>();
}

double as_double(const json& v) {
  if (!v.is_number()) throw std::invalid_argument("expected a number");
  return v.get<double>();
}

std::vector<int> as_int_list(const json& v) {
  if (v.is_number_integer()) return {v.get<int>()};
  if (!v.is_array()) throw std::invalid_argument("expected a list of integers");
  std::vector<int> out;
  for (const auto& e : v) out.push_back(as_int(e));
  return out;
}

std::vector<std::vector<int>> as_int_grid(const json& v) {
  if (!v.is_array()) throw std::invalid_argument("expected a list of integer lists");
  std::vector<std::vector<int>> out;
  for (const auto& e : v) out.push_back(as_int_list(e));
  return out;
}

template <typename Field>
void resnet_keys(std::vector<Key>& keys, const std::string& section, Field field) {
  auto targets = [section, field](Settings& s) {
    std::vector<nn::ResNetConfig*> t;
    if (section != "psp") t.push_back(&field(s, true));
    if (section != "asp") t.push_back(&field(s, false));
    return t;
  };
  auto source = [section, field](const Settings& s) -> const nn::ResNetConfig& {
    return field(const_cast<Settings&>(s), section != "psp");
  };
  keys.push_back({section + ".channels", [=](const Settings& s) { return json(source(s).channels); },
                  [=](Settings& s, const json& v) { for (auto* r : targets(s)) r->channels = as_int(v); }});
  keys.push_back({section + ".kernel_sizes", [=](const Settings& s) { return json(source(s).kernel_sizes); },
                  [=](Settings& s, const json& v) { for (auto* r : targets(s)) r->kernel_sizes = as_int_list(v); }});
  keys.push_back({section + ".dilations", [=](const Settings& s) { return json(source(s).dilations); },
                  [=](Settings& s, const json& v) { for (auto* r : targets(s)) r->dilations = as_int_grid(v); }});
  keys.push_back({section + ".lrelu_slope", [=](const Settings& s) { return json(source(s).lrelu_slope); },
                  [=](Settings& s, const json& v) { for (auto* r : targets(s)) r->lrelu_slope = as_double(v); }});
}

#define APNET_INT(name, expr) \
  Key{name, [](const Settings& s) { return json(s.expr); }, [](Settings& s, const json& v) { s.expr = as_int(v); }}
#define APNET_DOUBLE(name, expr)                                                                         \
  Key{name, [](const Settings& s) { return json(s.expr); }, [](Settings& s, const json& v) { \
        s.expr = as_double(v);                                                                           \
      }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k{
        APNET_INT("stft.sample_rate", model.stft.sample_rate),
        APNET_INT("stft.frame_length", model.stft.frame_length),
        APNET_INT("stft.frame_shift", model.stft.frame_shift),
        APNET_INT("stft.fft_size", model.stft.fft_size),
        Key{"stft.window",
            [](const Settings& s) { return json(s.model.stft.window == dsp::WindowKind::Hann ? "hann" : "rectangular"); },
            [](Settings& s, const json& v) {
              const std::string w = v.is_string() ? v.get<std::string>() : "";
              if (w == "hann") s.model.stft.window = dsp::WindowKind::Hann;
              else if (w == "rectangular") s.model.stft.window = dsp::WindowKind::Rectangular;
              else throw std::invalid_argument("expected hann or rectangular");
            }},
        APNET_INT("mel.num_mels", model.mel.num_mels),
        APNET_DOUBLE("mel.f_min", model.mel.f_min),
        APNET_DOUBLE("mel.f_max", model.mel.f_max),
        APNET_DOUBLE("mel.log_floor", model.mel.log_floor),
        APNET_INT("model.input_kernel", model.input_kernel),
        APNET_INT("model.output_kernel", model.output_kernel),
    };
    auto field = [](Settings& s, bool asp) -> nn::ResNetConfig& { return asp ? s.model.asp : s.model.psp; };
    for (const char* section : {"model", "asp", "psp"}) resnet_keys(k, section, field);
    k.insert(k.end(), {
        APNET_DOUBLE("train.learning_rate", train.learning_rate),
        APNET_DOUBLE("train.lr_decay", train.lr_decay),
        APNET_DOUBLE("train.beta1", train.beta1),
        APNET_DOUBLE("train.beta2", train.beta2),
        APNET_DOUBLE("train.adam_eps", train.adam_eps),
        APNET_DOUBLE("train.weight_decay", train.weight_decay),
        APNET_INT("train.batch_size", train.batch_size),
        APNET_INT("train.segment_samples", train.segment_samples),
        APNET_INT("train.epochs", train.epochs),
        Key{"train.max_steps", [](const Settings& s) { return json(s.train.max_steps); },
            [](Settings& s, const json& v) {
              if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
              s.train.max_steps = v.get<std::int64_t>();
            }},
        Key{"train.seed", [](const Settings& s) { return json(s.train.seed); },
            [](Settings& s, const json& v) {
              if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
              s.train.seed = v.get<std::uint64_t>();
            }},
        APNET_INT("train.checkpoint_every", train.checkpoint_every),
        APNET_DOUBLE("loss.lambda_a", loss.lambda_a),
        APNET_DOUBLE("loss.lambda_p", loss.lambda_p),
        APNET_DOUBLE("loss.lambda_s", loss.lambda_s),
        APNET_DOUBLE("loss.lambda_ri", loss.lambda_ri),
        APNET_DOUBLE("loss.lambda_mel", loss.lambda_mel),
    });
    return k;
  }();
  return table;
}

#undef APNET_INT
#undef APNET_DOUBLE

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_value(const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty()) throw std::invalid_argument("missing value");
  try {
    return json::parse(v);
  } catch (const json::exception&) {
    return json(v);  // bare word
  }
}

/// Drops a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (!quoted && (line[i] == '#' || line[i] == ';')) return line.substr(0, i);
  }
  return line;
}

}  // namespace

void Settings::finalize() {
  model.mel_dim = model.mel.num_mels;
  model.spec_bins = model.stft.num_bins();
  model.validate();
  train.validate(model.stft.frame_shift);
  loss.validate();
}

void set_value(Settings& s, const std::string& dotted_key, const std::string& value) {
  const Key* k = find_key(dotted_key);
  if (!k) fail(ErrorKind::Usage, "unknown setting '" + dotted_key + "'");
  try {
    k->set(s, parse_value(value));
    s.model.mel_dim = s.model.mel.num_mels;
    s.model.spec_bins = s.model.stft.num_bins();
  } catch (const std::exception& e) {
    fail(ErrorKind::Usage, "setting '" + dotted_key + "' = '" + trim(value) + "': " + e.what());
  }
}

void apply_override(Settings& s, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorKind::Usage, "override '" + assignment + "' is not of the form section.key=value");
  set_value(s, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

Settings parse(const std::string& text, const std::string& source) {
  Settings s;
  std::istringstream in(text);
  std::string line, section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string where = source + ":" + std::to_string(number);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ErrorKind::Usage, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Usage, where + ": expected key = value");
    if (section.empty()) fail(ErrorKind::Usage, where + ": setting outside any [section]");
    try {
      set_value(s, section + "." + trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.kind(), where + ": " + e.what());
    }
  }
  return s;
}

Settings load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path);
}

std::string to_text(const Settings& s) {
  const bool shared = s.model.asp == s.model.psp;
  std::string out, section;
  for (const auto& k : keys()) {
    const std::string sec = k.name.substr(0, k.name.find('.'));
    if ((sec == "model" && !shared && k.name != "model.input_kernel" && k.name != "model.output_kernel") ||
        ((sec == "asp" || sec == "psp") && shared))
      continue;
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(sec.size() + 1) + " = " + k.get(s).dump() + "\n";
  }
  return out;
}

std::vector<std::string> known_keys() {
  std::vector<std::string> names;
  for (const auto& k : keys()) names.push_back(k.name);
  return names;
}

}  // namespace apnet::config
