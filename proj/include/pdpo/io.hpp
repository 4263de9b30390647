#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdpo/env.hpp"
#include "pdpo/policy.hpp"
#include "pdpo/prefs.hpp"
#include "pdpo/prm.hpp"
#include "pdpo/rng.hpp"
#include "pdpo/rollout.hpp"

namespace pdpo {

using json = nlohmann::json;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Record encodings

inline json to_json(const Instance& inst) {
  json rules = json::array();
  for (const Rule& r : inst.rules) rules.push_back({{"antecedents", r.antecedents}, {"consequent", r.consequent}});
  return {{"id", inst.id},           {"n_atoms", inst.n_atoms},           {"base_facts", inst.base_facts},
          {"rules", rules},          {"options", inst.options},           {"answer_index", inst.answer_index},
          {"max_steps", inst.max_steps}};
}

inline Instance instance_from_json(const json& j) {
  Instance inst;
  inst.id = j.at("id").get<std::string>();
  inst.n_atoms = j.at("n_atoms").get<int>();
  inst.base_facts = j.at("base_facts").get<std::vector<Atom>>();
  for (const auto& r : j.at("rules"))
    inst.rules.push_back({r.at("antecedents").get<std::vector<Atom>>(), r.at("consequent").get<Atom>()});
  inst.options = j.at("options").get<std::vector<Atom>>();
  inst.answer_index = j.at("answer_index").get<int>();
  inst.max_steps = j.at("max_steps").get<int>();
  return inst;
}

inline json to_json(const Action& a) {
  return {{"kind", a.is_finish() ? "finish" : "apply"}, {"index", a.index}};
}

inline Action action_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "finish") return Action::finish(j.at("index").get<int>());
  if (kind == "apply") return Action::apply(j.at("index").get<int>());
  throw IoError("unknown action kind: " + kind);
}

inline json to_json(const Trajectory& t) {
  json steps = json::array();
  for (const Step& s : t.steps) steps.push_back({{"known", s.state.atoms()}, {"action", to_json(s.action)}});
  return {{"instance_id", t.instance_id},
          {"sample_index", t.sample_index},
          {"steps", steps},
          {"prediction", t.prediction ? json(*t.prediction) : json(nullptr)},
          {"valid", t.valid}};
}

/// Needs the instance to size the state masks.
inline Trajectory trajectory_from_json(const json& j, const Instance& inst) {
  Trajectory t;
  t.instance_id = j.at("instance_id").get<std::string>();
  t.sample_index = j.value("sample_index", -1);
  for (const auto& s : j.at("steps")) {
    Step st;
    st.state.known.assign(static_cast<std::size_t>(inst.n_atoms), 0);
    for (Atom a : s.at("known").get<std::vector<Atom>>()) {
      if (a < 0 || a >= inst.n_atoms) throw IoError("atom out of range in trajectory for " + inst.id);
      st.state.known[static_cast<std::size_t>(a)] = 1;
    }
    st.action = action_from_json(s.at("action"));
    t.steps.push_back(std::move(st));
  }
  if (!j.at("prediction").is_null()) t.prediction = j.at("prediction").get<int>();
  t.valid = j.at("valid").get<bool>();
  return t;
}

inline json to_json(const PRMRecord& r) {
  return {{"instance_id", r.instance_id}, {"sample_index", r.sample_index}, {"prefix_len", r.prefix_len},
          {"anchor", to_string(r.anchor)},  {"count", r.count},              {"k_used", r.k_used}};
}

inline PRMRecord record_from_json(const json& j) {
  return {j.at("instance_id").get<std::string>(), j.at("sample_index").get<int>(), j.at("prefix_len").get<int>(),
          parse_anchor(j.at("anchor").get<std::string>()), j.at("count").get<int>(), j.at("k_used").get<int>()};
}

/// Pairs reference their trajectories by (instance_id, sample_index).
inline json to_json(const PreferencePair& p) {
  return {{"instance_id", p.instance_id},
          {"chosen", p.chosen.sample_index},
          {"rejected", p.rejected.sample_index},
          {"source", to_string(p.source)},
          {"reward_gap", p.reward_gap ? json(*p.reward_gap) : json(nullptr)}};
}

inline PreferencePair pair_from_json(const json& j, const TrajectoryIndex& trajectories) {
  PreferencePair p;
  p.instance_id = j.at("instance_id").get<std::string>();
  p.chosen = trajectories.at(p.instance_id, j.at("chosen").get<int>());
  p.rejected = trajectories.at(p.instance_id, j.at("rejected").get<int>());
  const auto src = j.at("source").get<std::string>();
  if (src != "outcome" && src != "process") throw IoError("unknown pair source: " + src);
  p.source = src == "outcome" ? PairSource::outcome : PairSource::process;
  if (!j.at("reward_gap").is_null()) p.reward_gap = j.at("reward_gap").get<double>();
  return p;
}

// ---------------------------------------------------------------------------
// Line-delimited files

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const T& item : items) out << to_json(item).dump() << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing input file: " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline Dataset read_instances(const std::filesystem::path& path) {
  std::vector<Instance> items;
  for (const auto& j : read_jsonl(path)) items.push_back(instance_from_json(j));
  return Dataset(std::move(items));
}

inline std::vector<Trajectory> read_trajectories(const std::filesystem::path& path, const Dataset& dataset) {
  std::vector<Trajectory> out;
  for (const auto& j : read_jsonl(path)) {
    const auto id = j.at("instance_id").get<std::string>();
    if (!dataset.contains(id)) throw IoError(path.string() + ": unknown instance " + id);
    out.push_back(trajectory_from_json(j, dataset.at(id)));
  }
  return out;
}

inline std::vector<PRMRecord> read_records(const std::filesystem::path& path) {
  std::vector<PRMRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(record_from_json(j));
  return out;
}

inline std::vector<PreferencePair> read_pairs(const std::filesystem::path& path,
                                              const std::vector<Trajectory>& trajectories) {
  const TrajectoryIndex index(trajectories);
  std::vector<PreferencePair> out;
  for (const auto& j : read_jsonl(path)) out.push_back(pair_from_json(j, index));
  return out;
}

// ---------------------------------------------------------------------------
// Parameter files: one header line, then one value per line.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::map<std::string, std::string> parse_header(const std::string& line, const std::string& magic,
                                                       const std::string& file) {
  std::istringstream ss(line);
  std::string word;
  ss >> word;
  if (word != magic) throw IoError(file + ": expected header '" + magic + "'");
  std::map<std::string, std::string> kv;
  while (ss >> word) {
    auto eq = word.find('=');
    if (eq == std::string::npos) throw IoError(file + ": malformed header field '" + word + "'");
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  return kv;
}

inline int header_int(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& file) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError(file + ": header lacks " + key);
  return std::stoi(it->second);
}

inline std::vector<double> read_values(std::istream& in, std::size_t n, const std::string& file) {
  std::vector<double> v;
  v.reserve(n);
  std::string line;
  while (v.size() < n && std::getline(in, line)) v.push_back(std::stod(line));
  if (v.size() != n) throw IoError(file + ": expected " + std::to_string(n) + " values");
  return v;
}

}  // namespace detail

constexpr int kParamsVersion = 1;

inline void save_policy(const std::filesystem::path& path, const PolicyParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "pdpo-policy version=" << kParamsVersion << " n_features=" << p.n_features()
      << " n_options=" << p.space.n_options << " n_rule_slots=" << p.space.n_rule_slots << '\n';
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) out << detail::format_double(p.weights[i]) << '\n';
}

inline PolicyParams load_policy(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing input file: " + path.string());
  std::string header;
  std::getline(in, header);
  const auto kv = detail::parse_header(header, "pdpo-policy", path.string());
  if (detail::header_int(kv, "version", path.string()) != kParamsVersion) throw IoError(path.string() + ": unsupported version");
  PolicyFeatureSpace space{detail::header_int(kv, "n_options", path.string()),
                           detail::header_int(kv, "n_rule_slots", path.string())};
  const int n = detail::header_int(kv, "n_features", path.string());
  if (n != space.size()) throw IoError(path.string() + ": n_features disagrees with layout");
  PolicyParams p(space);
  const auto v = detail::read_values(in, static_cast<std::size_t>(n), path.string());
  for (int i = 0; i < n; ++i) p.weights[i] = v[static_cast<std::size_t>(i)];
  return p;
}

inline void save_prm(const std::filesystem::path& path, const PRMParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "pdpo-prm version=" << kParamsVersion << " k=" << p.k << " n_prm_features=" << p.space.size()
      << " n_rule_slots=" << p.space.n_rule_slots << '\n';
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) out << detail::format_double(p.weights(r, c)) << '\n';
}

inline PRMParams load_prm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing input file: " + path.string());
  std::string header;
  std::getline(in, header);
  const auto kv = detail::parse_header(header, "pdpo-prm", path.string());
  if (detail::header_int(kv, "version", path.string()) != kParamsVersion) throw IoError(path.string() + ": unsupported version");
  PrmFeatureSpace space{detail::header_int(kv, "n_rule_slots", path.string())};
  const int k = detail::header_int(kv, "k", path.string());
  if (detail::header_int(kv, "n_prm_features", path.string()) != space.size())
    throw IoError(path.string() + ": n_prm_features disagrees with layout");
  PRMParams p(k, space);
  const auto v = detail::read_values(in, static_cast<std::size_t>((k + 1) * space.size()), path.string());
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < p.weights.rows(); ++r)
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c) p.weights(r, c) = v[i++];
  return p;
}

// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing input file: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string file_hash(const std::filesystem::path& path) { return hex64(fnv1a(read_file(path))); }

/// Minimal CSV writer; fields are numbers or identifiers, never quoted.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header, bool append = false) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, append ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
    if (!out_) throw IoError("cannot write " + path.string());
    if (fresh) row(header);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) out_ << (i ? "," : "") << fields[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace pdpo
