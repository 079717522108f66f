#include "continuum/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "continuum/common/error.hpp"

namespace continuum::cli {
namespace {

// Typed access to one JSON object; remembers which keys were read so that
// finish() can reject the rest.
class Fields {
 public:
  Fields(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) fail(path_.empty() ? "document" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const Json& at(const std::string& key) {
    if (!has(key)) fail(child(key), "required field is missing");
    return obj_.at(key);
  }

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  std::string str(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_string()) fail(child(key), "expected a string");
    return v.get<std::string>();
  }
  std::string str(const std::string& key, std::string fallback) { return has(key) ? str(key) : fallback; }

  std::uint64_t u64(const std::string& key) { return as_u64(at(key), child(key)); }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) { return has(key) ? u64(key) : fallback; }

  std::int64_t i64(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number_integer()) fail(child(key), "expected an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
      fail(child(key), "integer out of range");
    }
    return v.get<std::int64_t>();
  }
  std::int64_t i64(const std::string& key, std::int64_t fallback) { return has(key) ? i64(key) : fallback; }

  double num(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_number()) fail(child(key), "expected a number");
    return v.get<double>();
  }
  double num(const std::string& key, double fallback) { return has(key) ? num(key) : fallback; }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const Json& v = obj_.at(key);
    if (!v.is_boolean()) fail(child(key), "expected true or false");
    return v.get<bool>();
  }

  std::vector<std::size_t> sizes(const std::string& key) {
    const Json& v = at(key);
    if (!v.is_array()) fail(child(key), "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out.push_back(as_u64(v[i], child(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) fail(child(key), "unknown field");
    }
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

  static std::uint64_t as_u64(const Json& v, const std::string& path) {
    if (!v.is_number_integer()) fail(path, "expected a non-negative integer");
    if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) fail(path, "expected a non-negative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

// Wraps module-level validation so the message names the config section.
template <typename Fn>
void validated(const std::string& section, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(section + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section + ": " + e.what());
  }
}

const std::set<std::string> kCommonKeys{"seed", "output_dir"};

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string what = e.what();
    const auto pos = what.find("syntax error");
    if (pos != std::string::npos) what = what.substr(pos);
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + what);
  }
}

std::uint64_t config_hash(const Json& doc) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : doc.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

Common read_common(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("document: expected an object");
  Common c;
  if (doc.contains("seed") && !doc["seed"].is_null()) c.seed = Fields::as_u64(doc["seed"], "seed");
  if (doc.contains("output_dir") && !doc["output_dir"].is_null()) {
    if (!doc["output_dir"].is_string()) throw ConfigError("output_dir: expected a string");
    c.output_dir = doc["output_dir"].get<std::string>();
  }
  return c;
}

data::Dataset load_dataset(const Json& spec, const std::string& path, std::uint64_t default_seed,
                           const std::filesystem::path& base_dir) {
  Fields f(spec, path);
  const bool synth = f.has("synth");
  const bool csv = f.has("csv");
  if (synth == csv) Fields::fail(path, "expected exactly one of \"synth\" or \"csv\"");
  data::Dataset ds;
  if (synth) {
    Fields s(spec.at("synth"), path + ".synth");
    const auto n = s.u64("n");
    const auto d = s.u64("d");
    const auto classes = s.u64("classes");
    const double sep = s.num("separation");
    const auto seed = s.u64("seed", default_seed);
    s.finish();
    validated(path + ".synth", [&] { ds = data::synth_blobs(n, d, classes, sep, seed); });
  } else {
    Fields c(spec.at("csv"), path + ".csv");
    std::filesystem::path file = c.str("path");
    if (file.is_relative()) file = base_dir / file;
    const auto label_column = c.u64("label_column");
    const auto classes = c.u64("classes");
    data::CsvOptions opts;
    opts.has_header = c.flag("header", false);
    c.finish();
    validated(path + ".csv", [&] { ds = data::load_csv(file, label_column, classes, opts); });
  }
  f.finish();
  return ds;
}

SdpExperiment parse_sdp_experiment(const Json& doc) {
  Fields f(doc, "");
  for (const auto& k : kCommonKeys) f.has(k);
  SdpExperiment ex;
  auto& p = ex.pipeline;
  p.name = f.str("name");
  p.source_topic = f.str("source_topic");
  if (f.has("source_node")) p.source_node = bus::NodeId::parse(f.str("source_node"));

  {
    Fields a(f.at("arrivals"), "arrivals");
    const auto count = a.u64("count");
    const auto interval = a.i64("interval_ms");
    const auto first = a.i64("first_ms", 0);
    const auto bytes = a.u64("item_bytes", 0);
    a.finish();
    validated("arrivals", [&] {
      ex.arrivals = sdp::ArrivalSchedule::constant(count, interval, first);
      ex.arrivals.item_bytes = bytes;
      ex.arrivals.validate();
    });
  }

  if (f.has("latency")) {
    Fields l(doc.at("latency"), "latency");
    ex.latency = bus::LinkLatency(l.i64("default_ms", 0));
    if (l.has("links")) {
      const Json& links = doc.at("latency").at("links");
      if (!links.is_array()) Fields::fail("latency.links", "expected an array");
      for (std::size_t i = 0; i < links.size(); ++i) {
        const std::string lp = "latency.links[" + std::to_string(i) + "]";
        Fields e(links[i], lp);
        const auto a = bus::NodeId::parse(e.str("a")).name;
        const auto b = bus::NodeId::parse(e.str("b")).name;
        const auto ms = e.i64("ms");
        e.finish();
        validated(lp, [&] { ex.latency.set(a, b, ms); });
      }
    }
    l.finish();
    if (ex.latency.default_ms() < 0) Fields::fail("latency.default_ms", "must be >= 0");
  }

  const Json& stages = f.at("stages");
  if (!stages.is_array() || stages.empty()) Fields::fail("stages", "expected a nonempty array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string sp = "stages[" + std::to_string(i) + "]";
    Fields s(stages[i], sp);
    sdp::StageSpec st;
    st.name = s.str("name");
    st.node = bus::NodeId::parse(s.str("node"));
    st.input_topic = s.str("input_topic");
    if (s.has("output_topic")) st.output_topic = s.str("output_topic");
    const bool constant = s.has("service_ms");
    const bool uniform = s.has("service_uniform_ms");
    if (constant == uniform) Fields::fail(sp, "expected exactly one of service_ms or service_uniform_ms");
    if (constant) {
      st.service = sdp::ServiceTime::constant(s.i64("service_ms"));
    } else {
      const Json& range = stages[i].at("service_uniform_ms");
      if (!range.is_array() || range.size() != 2 || !range[0].is_number_integer() ||
          !range[1].is_number_integer()) {
        Fields::fail(sp + ".service_uniform_ms", "expected [lo, hi] in integer milliseconds");
      }
      st.service = sdp::ServiceTime::uniform(range[0].get<std::int64_t>(), range[1].get<std::int64_t>());
    }
    const std::string kind = s.str("kind", "process");
    if (kind == "process") {
      st.kind = sdp::StageKind::Process;
    } else if (kind == "serverless_function") {
      st.kind = sdp::StageKind::ServerlessFunction;
    } else {
      Fields::fail(sp + ".kind", "expected \"process\" or \"serverless_function\", got \"" + kind + "\"");
    }
    st.servers = s.u64("servers", 1);
    st.cold_start_ms = s.i64("cold_start_ms", 0);
    st.cold_start_idle_ms = s.i64("cold_start_idle_ms", 0);
    st.size_factor = s.num("size_factor", 1.0);
    s.finish();
    p.stages.push_back(std::move(st));
  }
  f.finish();
  validated("stages", [&] { p.validate(); });
  return ex;
}

DistExperiment parse_dist_experiment(const Json& doc, std::uint64_t seed, const std::filesystem::path& base_dir) {
  Fields f(doc, "");
  for (const auto& k : kCommonKeys) f.has(k);
  DistExperiment ex;
  auto& job = ex.job;
  job.name = f.str("name", "job");
  job.layer_sizes = f.sizes("layers");
  validated("activation", [&] { job.hidden_activation = nn::parse_activation(f.str("activation", "sigmoid")); });
  job.learning_rate = f.num("lr");
  job.epochs = f.u64("epochs");
  job.num_workers = f.u64("workers");
  job.seed = seed;
  job.dataset = load_dataset(f.at("dataset"), "dataset", seed, base_dir);
  f.finish();
  validated("job", [&] { job.validate(); });
  return ex;
}

FlExperiment parse_fl_experiment(const Json& doc, std::uint64_t seed, const std::filesystem::path& base_dir) {
  Fields f(doc, "");
  for (const auto& k : kCommonKeys) f.has(k);
  FlExperiment ex;
  auto& c = ex.config;
  c.name = f.str("name", "fl");
  validated("mode", [&] { c.mode = fed::parse_mode(f.str("mode", "sync")); });
  c.num_clients = f.u64("clients");
  c.rounds = f.u64("rounds");
  c.samples_per_round = f.u64("samples_per_round", 60);
  c.local_epochs = f.u64("local_epochs", 1);
  c.learning_rate = f.num("lr");
  c.aggregation_interval_ms = f.i64("interval_ms", 0);
  c.staleness_bound = f.u64("staleness_bound", 1);
  c.layer_sizes = f.sizes("layers");
  validated("activation", [&] { c.hidden_activation = nn::parse_activation(f.str("activation", "sigmoid")); });
  c.test_fraction = f.num("test_fraction", 0.5);
  c.evaluate_clients = f.flag("evaluate_clients", false);
  c.seed = seed;

  ex.stragglers.miss_probability = f.num("straggler_p", 0.0);
  if (f.has("straggler_delay_ms")) {
    const Json& range = doc.at("straggler_delay_ms");
    if (!range.is_array() || range.size() != 2 || !range[0].is_number_integer() || !range[1].is_number_integer()) {
      Fields::fail("straggler_delay_ms", "expected [lo, hi] in integer milliseconds");
    }
    ex.stragglers.delay_min_ms = range[0].get<std::int64_t>();
    ex.stragglers.delay_max_ms = range[1].get<std::int64_t>();
  }
  ex.stragglers.seed = seed;
  ex.dataset = load_dataset(f.at("dataset"), "dataset", seed, base_dir);
  f.finish();
  validated("config", [&] {
    c.validate();
    ex.stragglers.validate();
  });
  if (c.mode == fed::Mode::Sync && !ex.stragglers.inactive()) {
    throw ConfigError("straggler_p: sync mode requires full participation (use \"mode\": \"async\")");
  }
  return ex;
}

}  // namespace continuum::cli
