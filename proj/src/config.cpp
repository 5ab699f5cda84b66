#include "pdcycon/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "pdcycon/error.hpp"

namespace pdcycon {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw Error(ErrorCode::InvalidConfig,
              "key '" + std::string(key) + "': '" + std::string(value) + "' is not " + expected);
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

// Shortest text that reads back to the same value.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Member>
Key size_key(const char* name, Member member) {
  return {name,
          [member](RunConfig& c, std::string_view k, std::string_view v) {
            member(c) = static_cast<std::size_t>(parse_uint(k, v));
          },
          [member](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }};
}

template <typename Member>
Key double_key(const char* name, Member member) {
  return {name, [member](RunConfig& c, std::string_view k, std::string_view v) { member(c) = parse_double(k, v); },
          [member](const RunConfig& c) { return fmt_double(member(const_cast<RunConfig&>(c))); }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t;
    // preprocessing
    t.push_back(size_key("ma_window", [](RunConfig& c) -> auto& { return c.preprocess.ma_window; }));
    t.push_back(double_key("alpha", [](RunConfig& c) -> auto& { return c.preprocess.alpha; }));
    t.push_back(double_key("beta", [](RunConfig& c) -> auto& { return c.preprocess.beta; }));
    t.push_back(size_key("knee_length", [](RunConfig& c) -> auto& { return c.preprocess.knee_length; }));
    t.push_back(double_key("knee_tau", [](RunConfig& c) -> auto& { return c.preprocess.knee_tau; }));
    t.push_back(size_key("n_peaks", [](RunConfig& c) -> auto& { return c.preprocess.n_peaks; }));
    t.push_back(size_key("window_t", [](RunConfig& c) -> auto& { return c.preprocess.window_t; }));
    t.push_back(size_key("window_f", [](RunConfig& c) -> auto& { return c.preprocess.window_f; }));
    t.push_back(size_key("peak_half_width", [](RunConfig& c) -> auto& { return c.preprocess.peak_half_width; }));
    t.push_back(double_key("peak_min_rel_height", [](RunConfig& c) -> auto& { return c.preprocess.peak_min_rel_height; }));

    // model
    t.push_back({"architecture",
                 [](RunConfig& c, std::string_view, std::string_view v) {
                   c.model_options.architecture = model::parse_architecture(v);
                 },
                 [](const RunConfig& c) { return model::to_string(c.model_options.architecture); }});
    t.push_back({"attention",
                 [](RunConfig& c, std::string_view, std::string_view v) {
                   c.model_options.attention = model::parse_attention(v);
                 },
                 [](const RunConfig& c) { return model::to_string(c.model_options.attention); }});
    t.push_back({"block_order",
                 [](RunConfig& c, std::string_view, std::string_view v) {
                   c.model_options.block_order = model::parse_block_order(v);
                 },
                 [](const RunConfig& c) { return model::to_string(c.model_options.block_order); }});
    t.push_back({"filters",
                 [](RunConfig& c, std::string_view k, std::string_view v) {
                   std::array<std::size_t, 3> f{};
                   std::size_t i = 0;
                   std::string_view rest = v;
                   while (true) {
                     const auto comma = rest.find(',');
                     if (i == 3) bad_value(k, v, "three comma-separated counts");
                     f[i++] = static_cast<std::size_t>(parse_uint(k, trim(rest.substr(0, comma))));
                     if (comma == std::string_view::npos) break;
                     rest = rest.substr(comma + 1);
                   }
                   if (i != 3) bad_value(k, v, "three comma-separated counts");
                   c.model_options.filters = f;
                 },
                 [](const RunConfig& c) {
                   const auto& f = c.model_options.filters;
                   return std::to_string(f[0]) + "," + std::to_string(f[1]) + "," + std::to_string(f[2]);
                 }});
    t.push_back(size_key("joint_filters", [](RunConfig& c) -> auto& { return c.model_options.joint_filters; }));
    t.push_back(size_key("kernel", [](RunConfig& c) -> auto& { return c.model_options.kernel; }));
    t.push_back(size_key("stride", [](RunConfig& c) -> auto& { return c.model_options.stride; }));
    t.push_back(size_key("joint_kernel", [](RunConfig& c) -> auto& { return c.model_options.joint_kernel; }));
    t.push_back(size_key("joint_stride", [](RunConfig& c) -> auto& { return c.model_options.joint_stride; }));
    t.push_back(double_key("se_ratio", [](RunConfig& c) -> auto& { return c.model_options.se_ratio; }));

    // training
    t.push_back(double_key("lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    t.push_back({"lr_schedule",
                 [](RunConfig& c, std::string_view, std::string_view v) {
                   c.train.lr_schedule = training::parse_lr_schedule(v);
                 },
                 [](const RunConfig& c) { return training::to_string(c.train.lr_schedule); }});
    t.push_back(size_key("batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    t.push_back(size_key("epochs", [](RunConfig& c) -> auto& { return c.train.epochs; }));
    t.push_back(size_key("folds", [](RunConfig& c) -> auto& { return c.train.folds; }));
    t.push_back(double_key("lambda", [](RunConfig& c) -> auto& { return c.train.lambda; }));
    t.push_back({"seed",
                 [](RunConfig& c, std::string_view k, std::string_view v) { c.train.seed = parse_uint(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    t.push_back(double_key("threshold", [](RunConfig& c) -> auto& { return c.train.threshold; }));
    t.push_back(double_key("adam_beta1", [](RunConfig& c) -> auto& { return c.train.beta1; }));
    t.push_back(double_key("adam_beta2", [](RunConfig& c) -> auto& { return c.train.beta2; }));
    t.push_back(double_key("adam_eps", [](RunConfig& c) -> auto& { return c.train.adam_eps; }));

    // synthetic data
    t.push_back(size_key("synth_n_samples", [](RunConfig& c) -> auto& { return c.synth.n_samples; }));
    t.push_back(double_key("synth_sample_rate", [](RunConfig& c) -> auto& { return c.synth.sample_rate; }));
    t.push_back(double_key("synth_grid_freq", [](RunConfig& c) -> auto& { return c.synth.grid_freq; }));
    t.push_back(double_key("synth_grid_amplitude", [](RunConfig& c) -> auto& { return c.synth.grid_amplitude; }));
    t.push_back(double_key("synth_noise_std", [](RunConfig& c) -> auto& { return c.synth.noise_std; }));
    t.push_back(size_key("synth_pd_pulse_count", [](RunConfig& c) -> auto& { return c.synth.pd_pulse_count; }));
    t.push_back(double_key("synth_pd_amplitude", [](RunConfig& c) -> auto& { return c.synth.pd_amplitude; }));
    t.push_back(double_key("synth_pd_phase_jitter_deg", [](RunConfig& c) -> auto& { return c.synth.pd_phase_jitter_deg; }));
    t.push_back(double_key("synth_pulse_spacing_deg", [](RunConfig& c) -> auto& { return c.synth.pulse_spacing_deg; }));
    t.push_back(double_key("synth_damping", [](RunConfig& c) -> auto& { return c.synth.damping; }));
    t.push_back(double_key("synth_carrier_freq", [](RunConfig& c) -> auto& { return c.synth.carrier_freq; }));
    t.push_back({"synth_seed",
                 [](RunConfig& c, std::string_view k, std::string_view v) { c.synth.seed = parse_uint(k, v); },
                 [](const RunConfig& c) { return std::to_string(c.synth.seed); }});
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& k : key_table()) {
    if (key == k.name) {
      k.set(*this, key, value);
      return;
    }
  }
  throw Error(ErrorCode::InvalidConfig, "unknown configuration key '" + std::string(key) + "'");
}

void RunConfig::apply(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw Error(ErrorCode::InvalidConfig, "expected key=value, got '" + std::string(assignment) + "'");
  }
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::apply_text(std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    try {
      apply(line);
    } catch (const Error& e) {
      throw Error(ErrorCode::InvalidConfig, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

model::ModelConfig RunConfig::model() const {
  model::ModelConfig m = model_options;
  m.n_peaks = preprocess.n_peaks;
  m.window_t = preprocess.window_t;
  m.freq_bins = preprocess.freq_bins();
  return m;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : key_table()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::validate() const {
  preprocess.validate();
  train.validate();
  synth.validate();
  model().validate();
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_text(ss.str());
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig c;
  c.apply_text(text);
  return c;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.name);
  return out;
}

}  // namespace pdcycon
