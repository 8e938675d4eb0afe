#include "gdfed/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "gdfed/error.hpp"

namespace gdfed {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw ConfigError("invalid value '" + value + "' for key '" + key + "': " + why);
}

template <typename T>
T parse_unsigned(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected a non-negative integer");
  if (out > std::numeric_limits<T>::max()) bad_value(key, v, "out of range");
  return static_cast<T>(out);
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    bad_value(key, v, "expected a finite number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string real_text(double v) {
  // Shortest representation that reads back to the same double.
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    t["mode"] = {[](auto& c, auto& k, auto& v) {
                   try {
                     c.mode = parse_mode(v);
                   } catch (const ArgumentError&) {
                     bad_value(k, v, "expected federated, central or local");
                   }
                 },
                 [](auto& c) { return std::string(mode_name(c.mode)); }};
    t["rounds"] = {[](auto& c, auto& k, auto& v) { c.rounds = parse_unsigned<std::uint32_t>(k, v); },
                   [](auto& c) { return std::to_string(c.rounds); }};
    t["clients"] = {[](auto& c, auto& k, auto& v) { c.clients = parse_unsigned<std::size_t>(k, v); },
                    [](auto& c) { return std::to_string(c.clients); }};
    t["seed"] = {[](auto& c, auto& k, auto& v) { c.seed = parse_unsigned<std::uint64_t>(k, v); },
                 [](auto& c) { return std::to_string(c.seed); }};
    t["corpus_path"] = {[](auto& c, auto&, auto& v) { c.corpus_path = v; },
                        [](auto& c) { return c.corpus_path; }};
    t["split"] = {[](auto& c, auto& k, auto& v) { c.split = parse_real(k, v); },
                  [](auto& c) { return real_text(c.split); }};
    t["context"] = {[](auto& c, auto& k, auto& v) { c.context = parse_unsigned<std::size_t>(k, v); },
                    [](auto& c) { return std::to_string(c.context); }};
    t["embed_dim"] = {[](auto& c, auto& k, auto& v) { c.embed_dim = parse_unsigned<std::size_t>(k, v); },
                      [](auto& c) { return std::to_string(c.embed_dim); }};
    t["lr"] = {[](auto& c, auto& k, auto& v) { c.lr = parse_real(k, v); },
               [](auto& c) { return real_text(c.lr); }};
    t["batch_size"] = {[](auto& c, auto& k, auto& v) { c.batch_size = parse_unsigned<std::size_t>(k, v); },
                       [](auto& c) { return std::to_string(c.batch_size); }};
    t["local_epochs"] = {
        [](auto& c, auto& k, auto& v) { c.local_epochs = parse_unsigned<std::size_t>(k, v); },
        [](auto& c) { return std::to_string(c.local_epochs); }};
    t["weight_decay"] = {[](auto& c, auto& k, auto& v) { c.weight_decay = parse_real(k, v); },
                         [](auto& c) { return real_text(c.weight_decay); }};
    t["max_grad_norm"] = {[](auto& c, auto& k, auto& v) { c.max_grad_norm = parse_real(k, v); },
                          [](auto& c) { return real_text(c.max_grad_norm); }};
    t["warmup_ratio"] = {[](auto& c, auto& k, auto& v) { c.warmup_ratio = parse_real(k, v); },
                         [](auto& c) { return real_text(c.warmup_ratio); }};
    t["lora_rank"] = {[](auto& c, auto& k, auto& v) { c.lora_rank = parse_unsigned<std::size_t>(k, v); },
                      [](auto& c) { return std::to_string(c.lora_rank); }};
    t["lora_alpha"] = {[](auto& c, auto& k, auto& v) { c.lora_alpha = parse_real(k, v); },
                       [](auto& c) { return real_text(c.lora_alpha); }};
    t["lora_dropout"] = {[](auto& c, auto& k, auto& v) { c.lora_dropout = parse_real(k, v); },
                         [](auto& c) { return real_text(c.lora_dropout); }};
    t["lora_targets"] = {[](auto& c, auto&, auto& v) { c.lora_targets = parse_list(v); },
                         [](auto& c) {
                           std::string out;
                           for (const auto& s : c.lora_targets) out += (out.empty() ? "" : ",") + s;
                           return out;
                         }};
    t["lora_literal_scaling"] = {
        [](auto& c, auto& k, auto& v) { c.lora_literal_scaling = parse_bool(k, v); },
        [](auto& c) { return std::string(c.lora_literal_scaling ? "true" : "false"); }};
    t["transport"] = {[](auto& c, auto& k, auto& v) {
                        if (v == "memory") c.transport = TransportKind::Memory;
                        else if (v == "tcp") c.transport = TransportKind::Tcp;
                        else bad_value(k, v, "expected memory or tcp");
                      },
                      [](auto& c) {
                        return std::string(c.transport == TransportKind::Tcp ? "tcp" : "memory");
                      }};
    t["host"] = {[](auto& c, auto&, auto& v) { c.host = v; }, [](auto& c) { return c.host; }};
    t["port"] = {[](auto& c, auto& k, auto& v) { c.port = parse_unsigned<std::uint16_t>(k, v); },
                 [](auto& c) { return std::to_string(c.port); }};
    t["timeout_ms"] = {
        [](auto& c, auto& k, auto& v) { c.timeout_ms = parse_unsigned<std::uint32_t>(k, v); },
        [](auto& c) { return std::to_string(c.timeout_ms); }};
    t["aggregation"] = {[](auto& c, auto& k, auto& v) {
                          if (v == "gradualdiff") c.aggregation = Aggregation::GradualDiff;
                          else if (v == "fedavg") c.aggregation = Aggregation::FedAvg;
                          else bad_value(k, v, "expected gradualdiff or fedavg");
                        },
                        [](auto& c) {
                          return std::string(c.aggregation == Aggregation::FedAvg ? "fedavg"
                                                                                  : "gradualdiff");
                        }};
    t["quantize_payload"] = {
        [](auto& c, auto& k, auto& v) { c.quantize_payload = parse_bool(k, v); },
        [](auto& c) { return std::string(c.quantize_payload ? "true" : "false"); }};
    t["delta_form"] = {[](auto& c, auto& k, auto& v) {
                         if (v == "factors") c.delta_form = DeltaForm::Factors;
                         else if (v == "dense") c.delta_form = DeltaForm::Dense;
                         else bad_value(k, v, "expected factors or dense");
                       },
                       [](auto& c) {
                         return std::string(c.delta_form == DeltaForm::Dense ? "dense" : "factors");
                       }};
    t["delta_weighting"] = {[](auto& c, auto& k, auto& v) {
                              if (v == "uniform") c.delta_weighting = Weighting::Uniform;
                              else if (v == "samples") c.delta_weighting = Weighting::Samples;
                              else bad_value(k, v, "expected uniform or samples");
                            },
                            [](auto& c) {
                              return std::string(c.delta_weighting == Weighting::Samples ? "samples"
                                                                                         : "uniform");
                            }};
    t["wire_precision"] = {[](auto& c, auto& k, auto& v) {
                             if (v == "f32") c.wire_precision = wire::Precision::F32;
                             else if (v == "f64") c.wire_precision = wire::Precision::F64;
                             else bad_value(k, v, "expected f32 or f64");
                           },
                           [](auto& c) {
                             return std::string(c.wire_precision == wire::Precision::F64 ? "f64"
                                                                                         : "f32");
                           }};
    t["output_dir"] = {[](auto& c, auto&, auto& v) { c.output_dir = v; },
                       [](auto& c) { return c.output_dir; }};
    t["bleu_smoothing"] = {[](auto& c, auto& k, auto& v) {
                             if (v == "none") c.bleu_smoothing = BleuSmoothing::None;
                             else if (v == "add_one") c.bleu_smoothing = BleuSmoothing::AddOne;
                             else bad_value(k, v, "expected none or add_one");
                           },
                           [](auto& c) {
                             return std::string(c.bleu_smoothing == BleuSmoothing::AddOne ? "add_one"
                                                                                          : "none");
                           }};
    t["bleu_samples"] = {
        [](auto& c, auto& k, auto& v) { c.bleu_samples = parse_unsigned<std::size_t>(k, v); },
        [](auto& c) { return std::to_string(c.bleu_samples); }};
    return t;
  }();
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw ConfigError("invalid value for key '" + key + "': " + why);
  };
  if (clients < 1) fail("clients", "must be >= 1");
  if (!(split > 0.0 && split < 1.0)) fail("split", "must lie in (0, 1)");
  if (context < 2) fail("context", "must be >= 2");
  if (embed_dim < 2) fail("embed_dim", "must be >= 2");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (local_epochs < 1) fail("local_epochs", "must be >= 1");
  if (weight_decay < 0.0) fail("weight_decay", "must be non-negative");
  if (!(max_grad_norm > 0.0)) fail("max_grad_norm", "must be positive");
  if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) fail("warmup_ratio", "must lie in [0, 1)");
  if (!(lora_alpha > 0.0)) fail("lora_alpha", "must be positive");
  if (lora_dropout < 0.0 || lora_dropout >= 1.0) fail("lora_dropout", "must lie in [0, 1)");
  if (lora_rank > 0 && lora_targets.empty()) fail("lora_targets", "must name at least one matrix");
  if (timeout_ms == 0) fail("timeout_ms", "must be positive");
  if (host.empty()) fail("host", "must be non-empty");
  if (!corpus_path.empty() && !std::filesystem::exists(corpus_path)) {
    fail("corpus_path", "file '" + corpus_path + "' does not exist");
  }
}

ProtocolConfig ExperimentConfig::protocol() const {
  ProtocolConfig p;
  p.rounds = rounds;
  p.clients = clients;
  p.aggregation = aggregation;
  p.delta_form = delta_form;
  p.delta_weighting = delta_weighting;
  p.quantize_payload = quantize_payload;
  p.precision = wire_precision;
  return p;
}

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    auto it = key_table().find(key);
    if (it == key_table().end()) throw ConfigError("unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("key '" + key + "' given twice");
    it->second.set(cfg, key, value);
  }
  if (!cfg.corpus_path.empty()) {
    std::filesystem::path p(cfg.corpus_path);
    if (p.is_relative()) p = base_dir / p;
    cfg.corpus_path = p.lexically_normal().string();
  }
  if (seen.count("output_dir")) {
    std::filesystem::path p(cfg.output_dir);
    if (p.is_relative()) p = base_dir / p;
    cfg.output_dir = p.lexically_normal().string();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), path.has_parent_path() ? path.parent_path() : ".");
}

std::string save_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& [key, k] : key_table()) os << key << " = " << k.get(cfg) << '\n';
  return os.str();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [key, _] : key_table()) out.push_back(key);
  return out;
}

}  // namespace gdfed
