#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddit/codec.hpp"
#include "ddit/model.hpp"
#include "ddit/samplers.hpp"
#include "ddit/train_config.hpp"

namespace ddit {

struct DataConfig {
  std::string dir;
  int image_size = 32;
};

struct SamplerSection {
  SamplerConfig sampler;
  double cfg_scale = 4.0;
};

/// Everything a run needs, mirrored one-to-one by the INI sections
/// [model], [codec], [train], [sampler], [data].
struct RunConfig {
  ModelConfig model;
  CodecConfig codec;
  TrainConfig train;
  SamplerSection sampler;
  DataConfig data;

  /// Checks every section and the codec/model channel agreement.
  void validate() const;
};

std::vector<std::string> preset_names();
/// Throws Error{usage} for unknown names.
RunConfig preset(const std::string& name);

/// "section.key" names in file order.
std::vector<std::string> config_keys();
/// Sets one field from its text form. Unknown keys and malformed values are
/// config errors.
void set_field(RunConfig& cfg, const std::string& dotted_key, const std::string& value);
std::string get_field(const RunConfig& cfg, const std::string& dotted_key);

/// Applies an INI file on top of `cfg`. Sections outside `extra_sections`
/// and the five config sections are rejected, as are unknown keys.
void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path,
                    std::map<std::string, std::map<std::string, std::string>>* extra = nullptr,
                    const std::vector<std::string>& extra_sections = {});
std::string to_ini(const RunConfig& cfg);
void write_ini_file(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::map<std::string, std::map<std::string, std::string>>& extra = {});

}  // namespace ddit
