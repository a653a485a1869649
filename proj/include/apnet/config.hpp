#pragma once

// Experiment settings file: "[section]" headers and "key = value" lines.
// Sections are stft, mel, model, train and loss; values are numbers, bare or
// quoted strings, or JSON-style lists. "#" and ";" start comments.

#include <string>
#include <vector>

#include "apnet/losses.hpp"
#include "apnet/model.hpp"
#include "apnet/trainer.hpp"

namespace apnet::config {

struct Settings {
  nn::ApnetConfig model;
  train::TrainConfig train;
  loss::LossWeights loss;

  /// Recomputes the derived sizes (mel_dim, spec_bins) and validates everything.
  void finalize();
  bool operator==(const Settings&) const = default;
};

/// Assigns one "section.key" value; model.* keys set both predictors.
void set_value(Settings& s, const std::string& dotted_key, const std::string& value);
/// Applies "section.key=value".
void apply_override(Settings& s, const std::string& assignment);

Settings parse(const std::string& text, const std::string& source = "<config>");
Settings load(const std::string& path);

/// Text that parse() maps back to the same settings.
std::string to_text(const Settings& s);

/// Every recognised "section.key".
std::vector<std::string> known_keys();

}  // namespace apnet::config
