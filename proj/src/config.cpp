#include "gazemil/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace gazemil {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw InputError("bad number '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw InputError("bad boolean '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(trim(item)));
  if (out.empty()) throw InputError("empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto integer = [&t](const std::string& key, auto field) {
      t[key] = [field](RunConfig& c, const std::string& v) { field(c) = parse_number<int>(v); };
    };
    auto real = [&t](const std::string& key, auto field) {
      t[key] = [field](RunConfig& c, const std::string& v) { field(c) = parse_number<double>(v); };
    };
    auto seed = [&t](const std::string& key, auto field) {
      t[key] = [field](RunConfig& c, const std::string& v) {
        field(c) = parse_number<std::uint64_t>(v);
      };
    };
    auto flag = [&t](const std::string& key, auto field) {
      t[key] = [field](RunConfig& c, const std::string& v) { field(c) = parse_bool(v); };
    };

    // Dataset.
    integer("train_negative", [](RunConfig& c) -> int& { return c.data.train.negative; });
    integer("train_positive", [](RunConfig& c) -> int& { return c.data.train.positive; });
    integer("val_negative", [](RunConfig& c) -> int& { return c.data.val.negative; });
    integer("val_positive", [](RunConfig& c) -> int& { return c.data.val.positive; });
    integer("test_negative", [](RunConfig& c) -> int& { return c.data.test.negative; });
    integer("test_positive", [](RunConfig& c) -> int& { return c.data.test.positive; });
    integer("domains", [](RunConfig& c) -> int& { return c.data.domains; });
    real("attend_prob", [](RunConfig& c) -> double& { return c.data.attend_prob; });
    integer("n_fix", [](RunConfig& c) -> int& { return c.data.n_fix; });
    seed("data_seed", [](RunConfig& c) -> std::uint64_t& { return c.data.seed; });
    real("sigma", [](RunConfig& c) -> double& { return c.data.sigma; });
    integer("window", [](RunConfig& c) -> int& { return c.data.window; });
    integer("bag_size", [](RunConfig& c) -> int& { return c.data.bag_size; });
    integer("width", [](RunConfig& c) -> int& { return c.data.synth.width; });
    integer("height", [](RunConfig& c) -> int& { return c.data.synth.height; });
    real("lesion_radius_min", [](RunConfig& c) -> double& { return c.data.synth.lesion_radius_min; });
    real("lesion_radius_max", [](RunConfig& c) -> double& { return c.data.synth.lesion_radius_max; });
    real("contrast_min", [](RunConfig& c) -> double& { return c.data.synth.contrast_min; });
    real("contrast_max", [](RunConfig& c) -> double& { return c.data.synth.contrast_max; });
    integer("max_lesions", [](RunConfig& c) -> int& { return c.data.synth.max_lesions; });
    real("noise_std", [](RunConfig& c) -> double& { return c.data.synth.noise_std; });

    // Training.
    integer("epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    real("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("momentum", [](RunConfig& c) -> double& { return c.train.momentum; });
    integer("batch_bags", [](RunConfig& c) -> int& { return c.train.batch_bags; });
    seed("seed_encoder", [](RunConfig& c) -> std::uint64_t& { return c.train.seed_encoder; });
    seed("seed_branch1", [](RunConfig& c) -> std::uint64_t& { return c.train.seed_branch1; });
    seed("seed_branch2", [](RunConfig& c) -> std::uint64_t& { return c.train.seed_branch2; });
    seed("seed_domain", [](RunConfig& c) -> std::uint64_t& { return c.train.seed_domain; });
    seed("seed_order", [](RunConfig& c) -> std::uint64_t& { return c.train.seed_order; });
    real("alpha", [](RunConfig& c) -> double& { return c.train.weights.alpha; });
    real("beta", [](RunConfig& c) -> double& { return c.train.weights.beta; });
    real("gamma", [](RunConfig& c) -> double& { return c.train.weights.gamma; });
    real("tau", [](RunConfig& c) -> double& { return c.train.weights.tau; });
    real("lambda_grl", [](RunConfig& c) -> double& { return c.train.weights.lambda_grl; });
    flag("dn", [](RunConfig& c) -> bool& { return c.train.flags.dn; });
    flag("cl", [](RunConfig& c) -> bool& { return c.train.flags.cl; });
    flag("ca", [](RunConfig& c) -> bool& { return c.train.flags.ca; });
    flag("sa", [](RunConfig& c) -> bool& { return c.train.flags.sa; });
    flag("da", [](RunConfig& c) -> bool& { return c.train.flags.da; });
    t["encoder"] = [](RunConfig& c, const std::string& v) {
      c.train.encoder.preset = parse_encoder_preset(v);
    };
    integer("output_dim", [](RunConfig& c) -> int& { return c.train.encoder.output_dim; });
    t["small_channels"] = [](RunConfig& c, const std::string& v) {
      c.train.encoder.small_channels = parse_list<int>(v);
    };
    integer("input_pool", [](RunConfig& c) -> int& { return c.train.encoder.input_pool; });
    integer("resnet_width", [](RunConfig& c) -> int& { return c.train.encoder.resnet_width; });
    integer("embed_dim", [](RunConfig& c) -> int& { return c.train.embed_dim; });
    integer("attn_dim", [](RunConfig& c) -> int& { return c.train.attn_dim; });
    integer("domain_hidden", [](RunConfig& c) -> int& { return c.train.domain_hidden; });

    // Experiments.
    t["seeds"] = [](RunConfig& c, const std::string& v) { c.seeds = parse_list<std::uint64_t>(v); };
    t["k_values"] = [](RunConfig& c, const std::string& v) { c.k_values = parse_list<int>(v); };
    seed("uniform_seed", [](RunConfig& c) -> std::uint64_t& { return c.uniform_seed; });
    t["preset"] = [](RunConfig& c, const std::string& v) {
      const SynthParams synth = c.data.synth;
      c.data = dataset_preset(v);
      c.data.synth = synth;
    };
    return t;
  }();
  return table;
}

}  // namespace

RunConfig default_run_config(bool paper_scale) {
  RunConfig c;
  c.data = dataset_preset(paper_scale ? "paper-dr" : "desk-dr");
  c.train = paper_scale ? TrainConfig::paper_scale() : TrainConfig{};
  return c;
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  struct Line {
    int number;
    std::string key;
    std::string value;
  };
  std::vector<Line> lines;
  std::istringstream is{std::string(text)};
  std::string raw;
  int number = 0;
  while (std::getline(is, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InputError("config line " + std::to_string(number) + ": expected key = value");
    }
    Line l{number, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (!setters().contains(l.key)) {
      throw InputError("config line " + std::to_string(number) + ": unknown key '" + l.key + "'");
    }
    lines.push_back(std::move(l));
  }
  std::stable_partition(lines.begin(), lines.end(), [](const Line& l) { return l.key == "preset"; });
  for (const auto& l : lines) {
    try {
      setters().at(l.key)(base, l.value);
    } catch (const InputError& e) {
      throw InputError("config line " + std::to_string(l.number) + " (" + l.key + "): " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), std::move(base));
}

void finalize(RunConfig& config) {
  auto& d = config.data;
  for (const ClassCounts* c : {&d.train, &d.val, &d.test}) {
    if (c->negative < 0 || c->positive < 0) throw InputError("class counts must be >= 0");
  }
  if (d.domains < 1) throw InputError("domains must be >= 1");
  if (!(d.attend_prob >= 0.0 && d.attend_prob <= 1.0)) {
    throw InputError("attend_prob must be in [0, 1]");
  }
  if (d.n_fix < 1) throw InputError("n_fix must be >= 1");
  if (!(d.sigma > 0.0)) throw InputError("sigma must be > 0");
  if (config.seeds.empty()) throw InputError("seeds must list at least one seed");
  config.train.window = d.window;
  config.train.bag_size = d.bag_size;
  config.train.validate();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace gazemil
