#include "d3seg/config.hpp"

#include "d3seg/diffusion.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace d3seg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config: cannot parse " + key + " = '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: " + key + " must be true or false, got '" + value + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> read;
  std::function<std::string(const RunConfig&)> write;
};

template <typename T>
Field number_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) {
            c.*member = parse_number<T>("value", v);
          },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

Field string_field(std::string RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = v; },
          [member](const RunConfig& c) { return c.*member; }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"seed", number_field(&RunConfig::seed)},
      {"size", number_field(&RunConfig::size)},
      {"levels", number_field(&RunConfig::levels)},
      {"base_channels", number_field(&RunConfig::base_channels)},
      {"train_samples", number_field(&RunConfig::train_samples)},
      {"test_samples", number_field(&RunConfig::test_samples)},
      {"epochs_seg", number_field(&RunConfig::epochs_seg)},
      {"epochs_diffusion", number_field(&RunConfig::epochs_diffusion)},
      {"epochs_refine", number_field(&RunConfig::epochs_refine)},
      {"learning_rate", number_field(&RunConfig::learning_rate)},
      {"lr_diffusion", number_field(&RunConfig::lr_diffusion)},
      {"lr_refine", number_field(&RunConfig::lr_refine)},
      {"batch_size", number_field(&RunConfig::batch_size)},
      {"diffusion_steps", number_field(&RunConfig::diffusion_steps)},
      {"sampling_steps", number_field(&RunConfig::sampling_steps)},
      {"lambda_e", number_field(&RunConfig::lambda_e)},
      {"augment",
       {[](RunConfig& c, const std::string& v) { c.augment = parse_bool("augment", v); },
        [](const RunConfig& c) { return std::string(c.augment ? "true" : "false"); }}},
      {"mask_curriculum", string_field(&RunConfig::mask_curriculum)},
      {"data_dir", string_field(&RunConfig::data_dir)},
      {"checkpoint_dir", string_field(&RunConfig::checkpoint_dir)},
      {"report_path", string_field(&RunConfig::report_path)},
  };
  return table;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("config: " + message);
}

}  // namespace

void RunConfig::validate() const {
  require(levels >= 1 && levels <= 5, "levels must be in [1, 5]");
  require(size >= 16 && size <= 64, "size must be in [16, 64]");
  require(size % (std::size_t{1} << levels) == 0,
          "size " + std::to_string(size) + " must be divisible by 2^levels");
  require(base_channels >= 1 && base_channels <= 64, "base_channels must be in [1, 64]");
  require((base_channels << levels) % 4 == 0, "bottleneck width must be divisible by 4 heads");
  require(train_samples >= 1, "train_samples must be >= 1");
  require(test_samples >= 1, "test_samples must be >= 1");
  require(batch_size >= 1 && batch_size <= train_samples, "batch_size must be in [1, train_samples]");
  for (double lr : {learning_rate, lr_diffusion, lr_refine}) {
    require(lr > 0.0 && lr <= 1.0, "learning rates must be in (0, 1]");
  }
  require(diffusion_steps >= kMinDiffusionSteps && diffusion_steps <= kMaxDiffusionSteps,
          "diffusion_steps must be in [8, 1024]");
  require(sampling_steps >= 1 && sampling_steps <= diffusion_steps,
          "sampling_steps must be in [1, diffusion_steps]");
  require(lambda_e >= 0.0 && lambda_e <= 100.0, "lambda_e must be in [0, 100]");
  require(mask_curriculum == "uniform" || mask_curriculum == "full",
          "mask_curriculum must be uniform or full");
  require(!data_dir.empty() && !checkpoint_dir.empty() && !report_path.empty(),
          "paths must be non-empty");
}

NetworkConfig RunConfig::network() const {
  NetworkConfig net;
  net.levels = levels;
  net.base_channels = base_channels;
  net.input_size = size;
  return net;
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    bool known = false;
    for (const auto& [name, field] : fields()) {
      if (name != key) continue;
      try {
        field.read(config, value);
      } catch (const ConfigError&) {
        throw ConfigError("config line " + std::to_string(line_no) + ": bad value for " + key +
                          ": '" + value + "'");
      }
      known = true;
    }
    if (!known) {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string write_config(const RunConfig& config) {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.write(config) + "\n";
  return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << write_config(config);
}

}  // namespace d3seg
