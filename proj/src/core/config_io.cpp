#include "bhfl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "bhfl/hash.hpp"

namespace bhfl {

using nlohmann::json;

namespace {

const std::vector<std::pair<Strategy, const char*>> kStrategies = {
    {Strategy::kFedAvg, "fedavg"},         {Strategy::kFedProx, "fedprox"},
    {Strategy::kFedPaq, "fedpaq"},         {Strategy::kFedCom, "fedcom"},
    {Strategy::kFedComGate, "fedcomgate"}, {Strategy::kGrouped, "grouped"},
    {Strategy::kGroupedAsym, "grouped_asym"}, {Strategy::kProwd, "prowd"},
    {Strategy::kLocal, "local"},
};

}  // namespace

std::string strategy_name(Strategy s) {
  for (const auto& [k, n] : kStrategies) {
    if (k == s) return n;
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& name) {
  for (const auto& [k, n] : kStrategies) {
    if (name == n) return k;
  }
  std::string known;
  for (const auto& [k, n] : kStrategies) known += std::string(known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown strategy '" + name + "' (expected one of: " + known + ")");
}

bool is_qpc(Strategy s) {
  return s == Strategy::kFedPaq || s == Strategy::kFedCom || s == Strategy::kFedComGate;
}

std::vector<QuantSpec> FederationConfig::client_specs() const {
  std::vector<QuantSpec> specs;
  for (const auto& r : roster) {
    for (int i = 0; i < r.count; ++i) specs.push_back(QuantSpec::from_bits(r.bits));
  }
  return specs;
}

int FederationConfig::num_clients() const {
  int n = 0;
  for (const auto& r : roster) n += r.count;
  return n;
}

void FederationConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("config field '" + field + "': " + why);
  };
  if (roster.empty()) fail("roster", "must list at least one bitwidth group");
  std::set<int> seen;
  for (const auto& r : roster) {
    if (r.bits < 2) fail("roster.bits", "must be >= 2 (32 or more means full precision)");
    if (r.count < 1) fail("roster.count", "must be >= 1");
    if (!seen.insert(QuantSpec::from_bits(r.bits).bits()).second) {
      fail("roster", "bitwidth " + std::to_string(r.bits) + " listed twice");
    }
  }
  const int n = num_clients();
  if (rounds < 0) fail("rounds", "must be >= 0");
  if (clients_per_round < 0 || clients_per_round > n) fail("clients_per_round", "must lie in [0, clients]");
  if (local_steps < 0) fail("local_steps", "must be >= 0");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(eta > 0)) fail("eta", "must be positive");
  if (!(lr > 0)) fail("lr", "must be positive");
  if (momentum < 0 || momentum >= 1) fail("momentum", "must lie in [0, 1)");
  if (!(clip_norm > 0)) fail("clip_norm", "must be positive");
  if (prox_mu < 0) fail("prox_mu", "must be >= 0");
  if (qpc_gamma < 0) fail("qpc_gamma", "must be >= 0");
  if (tau_keep <= 0 || tau_keep > 1) fail("tau_keep", "must lie in (0, 1]");
  if (mask_steps < 1) fail("mask_steps", "must be >= 1");
  if (dequant_every < 0) fail("dequant_every", "must be >= 0");
  if (dequant_epochs < 0) fail("dequant_epochs", "must be >= 0");
  if (!(dequant_lr > 0)) fail("dequant_lr", "must be positive");
  if (dequant_batch < 1) fail("dequant_batch", "must be >= 1");
  if (dequant_lambda < 0) fail("dequant_lambda", "must be >= 0");
  if (dequant_tau < 0) fail("dequant_tau", "must be >= 0");
  if (block_channels < 2 || block_channels % 2) fail("block_channels", "must be even and >= 2");
  if (buffer_size < 1) fail("buffer_size", "must be >= 1");
  if (buffer_noise < 0) fail("buffer_noise", "must be >= 0");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (histogram_bins < 1) fail("histogram_bins", "must be >= 1");
  if (ternary_epsilon <= 0 || ternary_epsilon >= 0.25) fail("ternary_epsilon", "must lie in (0, 0.25)");
  if (threads < 1) fail("threads", "must be >= 1");
  if (seeds.empty()) fail("seeds", "must list at least one seed");
  if (data.kind != "synthetic" && data.kind != "mnist" && data.kind != "cifar10") {
    fail("data.kind", "must be synthetic, mnist or cifar10");
  }
  if (data.image_size < 4) fail("data.image_size", "must be >= 4");
  if (data.train_per_class < 1 || data.test_per_class < 1) fail("data", "per-class counts must be >= 1");
  if (arch.conv_channels.empty()) fail("arch.conv_channels", "must list at least one conv layer");
  for (int c : arch.conv_channels) {
    if (c < 1) fail("arch.conv_channels", "channel counts must be >= 1");
  }
  if (augment.pad < 0) fail("augment.pad", "must be >= 0");
  // Ladder must span the roster. With ternary uplink, fixed-point clients
  // arrive at the server as Int2.
  std::vector<QuantSpec> ladder;
  for (int b : ladder_bits) ladder.push_back(QuantSpec::from_bits(b));
  for (std::size_t i = 1; i < ladder.size(); ++i) {
    if (!(ladder[i - 1] < ladder[i])) fail("ladder_bits", "must be strictly increasing");
  }
  if (strategy == Strategy::kProwd) {
    if (ladder.empty()) fail("ladder_bits", "must not be empty");
    std::vector<QuantSpec> uplink_specs;
    for (const auto& s : client_specs()) {
      uplink_specs.push_back(uplink == UplinkMode::kTernary && !s.is_full() ? kInt2 : s);
    }
    const auto [lo, hi] = std::minmax_element(uplink_specs.begin(), uplink_specs.end());
    if (ladder.front() != *lo || ladder.back() != *hi) {
      fail("ladder_bits", "must start at " + lo->name() + " and end at " + hi->name() +
                              " (uplink bitwidths)");
    }
    for (const auto& s : uplink_specs) {
      if (std::find(ladder.begin(), ladder.end(), s) == ladder.end()) {
        fail("ladder_bits", "lacks uplink bitwidth " + s.name());
      }
    }
  }
}

namespace {

json to_json(const FederationConfig& c) {
  json roster = json::array();
  for (const auto& r : c.roster) roster.push_back({{"bits", r.bits}, {"count", r.count}});
  return json{
      {"strategy", strategy_name(c.strategy)},
      {"roster", roster},
      {"rounds", c.rounds},
      {"clients_per_round", c.clients_per_round},
      {"local_steps", c.local_steps},
      {"batch_size", c.batch_size},
      {"uplink", c.uplink == UplinkMode::kTernary ? "ternary" : "native"},
      {"eta", c.eta},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"clip_norm", c.clip_norm},
      {"prox_mu", c.prox_mu},
      {"qpc_gamma", c.qpc_gamma},
      {"ladder_bits", c.ladder_bits},
      {"tau_keep", c.tau_keep},
      {"mask_steps", c.mask_steps},
      {"dequant",
       {{"every", c.dequant_every},
        {"concurrent", c.dequant_concurrent},
        {"epochs", c.dequant_epochs},
        {"lr", c.dequant_lr},
        {"batch", c.dequant_batch},
        {"lambda", c.dequant_lambda},
        {"tau", c.dequant_tau},
        {"block_channels", c.block_channels},
        {"buffer_size", c.buffer_size},
        {"buffer_noise", c.buffer_noise}}},
      {"arch", {{"conv_channels", c.arch.conv_channels}}},
      {"data",
       {{"kind", c.data.kind},
        {"dir", c.data.dir},
        {"image_size", c.data.image_size},
        {"train_per_class", c.data.train_per_class},
        {"test_per_class", c.data.test_per_class},
        {"seed", c.data.seed},
        {"noise", c.data.noise},
        {"jitter", c.data.jitter},
        {"clutter", c.data.clutter}}},
      {"augment",
       {{"pad", c.augment.pad},
        {"hflip", c.augment.hflip},
        {"max_rotation_deg", c.augment.max_rotation_deg}}},
      {"eval_every", c.eval_every},
      {"histogram_rounds", c.histogram_rounds},
      {"histogram_bins", c.histogram_bins},
      {"ternary_epsilon", c.ternary_epsilon},
      {"threads", c.threads},
      {"seeds", c.seeds},
  };
}

bool compatible(const json& def, const json& val) {
  if (def.is_number()) {
    if (def.is_number_integer() || def.is_number_unsigned()) {
      return val.is_number_integer() || val.is_number_unsigned();
    }
    return val.is_number();
  }
  if (def.is_boolean()) return val.is_boolean();
  if (def.is_string()) return val.is_string();
  if (def.is_array()) return val.is_array();
  if (def.is_object()) return val.is_object();
  return false;
}

void merge_checked(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config" + (path.empty() ? "" : " field '" + path + "'") + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (!compatible(slot, it.value())) {
      throw ConfigError("config field '" + key + "' has the wrong type (expected " +
                        std::string(slot.type_name()) + ", got " + it.value().type_name() + ")");
    }
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + path + key + "' has an invalid value");
  }
}

FederationConfig from_json(const json& j) {
  FederationConfig c;
  c.strategy = parse_strategy(get<std::string>(j, "strategy", ""));
  c.roster.clear();
  for (const auto& r : j.at("roster")) {
    if (!r.is_object()) throw ConfigError("config field 'roster' entries must be objects");
    for (auto it = r.begin(); it != r.end(); ++it) {
      if (it.key() != "bits" && it.key() != "count") {
        throw ConfigError("unknown config key 'roster." + it.key() + "'");
      }
    }
    if (!r.contains("bits")) throw ConfigError("config field 'roster.bits' is required");
    c.roster.push_back({get<int>(r, "bits", "roster."), r.contains("count") ? get<int>(r, "count", "roster.") : 1});
  }
  c.rounds = get<int>(j, "rounds", "");
  c.clients_per_round = get<int>(j, "clients_per_round", "");
  c.local_steps = get<int>(j, "local_steps", "");
  c.batch_size = get<int>(j, "batch_size", "");
  const auto uplink = get<std::string>(j, "uplink", "");
  if (uplink != "ternary" && uplink != "native") {
    throw ConfigError("config field 'uplink' must be 'ternary' or 'native'");
  }
  c.uplink = uplink == "ternary" ? UplinkMode::kTernary : UplinkMode::kNative;
  c.eta = get<double>(j, "eta", "");
  c.lr = get<double>(j, "lr", "");
  c.momentum = get<double>(j, "momentum", "");
  c.clip_norm = get<double>(j, "clip_norm", "");
  c.prox_mu = get<double>(j, "prox_mu", "");
  c.qpc_gamma = get<double>(j, "qpc_gamma", "");
  c.ladder_bits = get<std::vector<int>>(j, "ladder_bits", "");
  c.tau_keep = get<double>(j, "tau_keep", "");
  c.mask_steps = get<int>(j, "mask_steps", "");
  const auto& d = j.at("dequant");
  c.dequant_every = get<int>(d, "every", "dequant.");
  c.dequant_concurrent = get<bool>(d, "concurrent", "dequant.");
  c.dequant_epochs = get<int>(d, "epochs", "dequant.");
  c.dequant_lr = get<double>(d, "lr", "dequant.");
  c.dequant_batch = get<int>(d, "batch", "dequant.");
  c.dequant_lambda = get<double>(d, "lambda", "dequant.");
  c.dequant_tau = get<double>(d, "tau", "dequant.");
  c.block_channels = get<int>(d, "block_channels", "dequant.");
  c.buffer_size = get<int>(d, "buffer_size", "dequant.");
  c.buffer_noise = get<double>(d, "buffer_noise", "dequant.");
  c.arch.conv_channels = get<std::vector<int>>(j.at("arch"), "conv_channels", "arch.");
  const auto& data = j.at("data");
  c.data.kind = get<std::string>(data, "kind", "data.");
  c.data.dir = get<std::string>(data, "dir", "data.");
  c.data.image_size = get<int>(data, "image_size", "data.");
  c.data.train_per_class = get<int>(data, "train_per_class", "data.");
  c.data.test_per_class = get<int>(data, "test_per_class", "data.");
  c.data.seed = get<std::uint64_t>(data, "seed", "data.");
  c.data.noise = get<double>(data, "noise", "data.");
  c.data.jitter = get<double>(data, "jitter", "data.");
  c.data.clutter = get<double>(data, "clutter", "data.");
  const auto& a = j.at("augment");
  c.augment.pad = get<int>(a, "pad", "augment.");
  c.augment.hflip = get<bool>(a, "hflip", "augment.");
  c.augment.max_rotation_deg = get<double>(a, "max_rotation_deg", "augment.");
  c.eval_every = get<int>(j, "eval_every", "");
  c.histogram_rounds = get<std::vector<int>>(j, "histogram_rounds", "");
  c.histogram_bins = get<int>(j, "histogram_bins", "");
  c.ternary_epsilon = get<double>(j, "ternary_epsilon", "");
  c.threads = get<int>(j, "threads", "");
  c.seeds = get<std::vector<std::uint64_t>>(j, "seeds", "");
  return c;
}

json parse_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + origin + ": " + e.what());
  }
}

}  // namespace

FederationConfig config_from_json_text(const std::string& text) {
  json base = to_json(FederationConfig{});
  merge_checked(base, parse_text(text, "config"), "");
  FederationConfig c = from_json(base);
  c.validate();
  return c;
}

FederationConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const FederationConfig& cfg, int indent) {
  return to_json(cfg).dump(indent);
}

FederationConfig apply_overrides(const FederationConfig& cfg,
                                 const std::vector<std::string>& overrides) {
  json base = to_json(cfg);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override '" + o + "' must have the form key=value");
    }
    const std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;  // bare string
    }
    json patch = value;
    std::size_t end = key.size();
    while (true) {
      const auto dot = key.rfind('.', end - 1);
      const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                          end - (dot == std::string::npos ? 0 : dot + 1));
      patch = json{{part, patch}};
      if (dot == std::string::npos) break;
      end = dot;
    }
    merge_checked(base, patch, "");
  }
  FederationConfig c = from_json(base);
  c.validate();
  return c;
}

std::string config_hash(const FederationConfig& cfg) {
  return hex64(fnv1a64(to_json(cfg).dump()));
}

}  // namespace bhfl
