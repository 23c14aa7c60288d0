#include "liverdiff/turing.hpp"

#include "liverdiff/hash.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

namespace liverdiff::turing {

std::string to_string(Truth t) { return t == Truth::real ? "real" : "synthetic"; }
std::string to_string(Judgment j) { return j == Judgment::real ? "real" : "synthetic"; }

std::string to_string(Source s) {
  switch (s) {
    case Source::real: return "real";
    case Source::semantic: return "semantic";
    case Source::class2img: return "class2img";
  }
  return "?";
}

Judgment judgment_from_string(const std::string& s) {
  if (s == "real") return Judgment::real;
  if (s == "synthetic") return Judgment::synthetic;
  throw std::invalid_argument("judgment must be \"real\" or \"synthetic\"");
}

namespace {

Source source_from_string(const std::string& s) {
  for (auto v : {Source::real, Source::semantic, Source::class2img})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown item source: " + s);
}

std::string now_iso() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string random_token() {
  std::random_device rd;
  std::ostringstream os;
  for (int i = 0; i < 4; ++i) os << std::hex << std::setw(8) << std::setfill('0') << rd();
  return os.str();
}

}  // namespace

std::vector<std::string> composition_violations(const TestDefinition& def) {
  std::vector<std::string> v;
  const auto expect = [&](const std::string& what, int got, int want) {
    if (got != want) v.push_back(what + ": " + std::to_string(got) + " (expected " + std::to_string(want) + ")");
  };
  expect("items", static_cast<int>(def.items.size()), kTestLength);
  int real = 0, semantic = 0, class2img = 0, un_real = 0, un_syn = 0, he_real = 0, he_syn = 0;
  std::set<std::string> ids;
  for (const auto& it : def.items) {
    if (!ids.insert(it.image_id).second) v.push_back("duplicate image " + it.image_id);
    if ((it.truth == Truth::real) != (it.source == Source::real))
      v.push_back("item " + it.image_id + ": truth does not match source");
    real += it.source == Source::real;
    semantic += it.source == Source::semantic;
    class2img += it.source == Source::class2img;
    const bool is_real = it.truth == Truth::real;
    if (it.disease_class == ClassLabel::unhealthy)
      (is_real ? un_real : un_syn)++;
    else
      (is_real ? he_real : he_syn)++;
  }
  expect("real images", real, 20);
  expect("semantic images", semantic, 15);
  expect("class2img images", class2img, 15);
  expect("unhealthy real", un_real, 13);
  expect("unhealthy synthetic", un_syn, 18);
  expect("healthy real", he_real, 7);
  expect("healthy synthetic", he_syn, 12);
  return v;
}

nlohmann::json to_json(const TestDefinition& def) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : def.items)
    items.push_back({{"image_id", it.image_id},
                     {"truth", to_string(it.truth)},
                     {"source", to_string(it.source)},
                     {"disease_class", to_int(it.disease_class)},
                     {"image_path", it.image_path.string()}});
  return {{"items", items}};
}

TestDefinition definition_from_json(const nlohmann::json& j) {
  TestDefinition def;
  for (const auto& e : j.at("items")) {
    Item it;
    it.image_id = e.at("image_id");
    it.truth = e.at("truth").get<std::string>() == "real" ? Truth::real : Truth::synthetic;
    it.source = source_from_string(e.at("source"));
    it.disease_class = label_from_int(e.at("disease_class"));
    it.image_path = e.at("image_path").get<std::string>();
    def.items.push_back(std::move(it));
  }
  return def;
}

std::string version_id(const TestDefinition& def) { return sha256_hex(to_json(def).dump()).substr(0, 16); }

Report compute_report(const TestDefinition& def, const std::vector<Session>& sessions, bool include_incomplete) {
  std::vector<const Session*> used;
  for (const auto& s : sessions)
    if (s.complete() || (include_incomplete && !s.responses.empty())) used.push_back(&s);
  if (used.empty()) throw std::invalid_argument("turing report: no complete sessions");

  Report rep;
  rep.n_participants = static_cast<int>(used.size());
  const std::vector<std::pair<std::string, std::optional<ClassLabel>>> groups{
      {"unhealthy", ClassLabel::unhealthy}, {"healthy", ClassLabel::healthy}, {"both classes", std::nullopt}};
  for (const auto& [name, cls] : groups) {
    std::vector<double> acc, sens, spec;
    for (const auto* s : used) {
      int n = 0, correct = 0, n_real = 0, correct_real = 0, n_syn = 0, correct_syn = 0;
      for (const auto& r : s->responses) {
        const auto& it = def.items.at(static_cast<std::size_t>(r.index));
        if (cls && it.disease_class != *cls) continue;
        const bool ok = (r.judgment == Judgment::real) == (it.truth == Truth::real);
        ++n;
        correct += ok;
        if (it.truth == Truth::real) {
          ++n_real;
          correct_real += ok;
        } else {
          ++n_syn;
          correct_syn += ok;
        }
      }
      if (n) acc.push_back(static_cast<double>(correct) / n);
      if (n_real) sens.push_back(static_cast<double>(correct_real) / n_real);
      if (n_syn) spec.push_back(static_cast<double>(correct_syn) / n_syn);
    }
    MetricRow row;
    row.subgroup = name;
    if (!acc.empty()) row.accuracy = t_interval(acc);
    if (!sens.empty()) row.sensitivity = t_interval(sens);
    if (!spec.empty()) row.specificity = t_interval(spec);
    rep.rows.push_back(row);
  }

  for (std::size_t i = 0; i < def.items.size(); ++i)
    rep.tallies.push_back({static_cast<int>(i), def.items[i].image_id, def.items[i].truth, 0, 0});
  for (const auto* s : used)
    for (const auto& r : s->responses) {
      auto& t = rep.tallies.at(static_cast<std::size_t>(r.index));
      ++t.responses;
      t.correct += (r.judgment == Judgment::real) == (t.truth == Truth::real);
    }
  const auto top = [&](Truth truth, bool most_correct) {
    std::vector<ImageTally> v;
    for (const auto& t : rep.tallies)
      if (t.truth == truth) v.push_back(t);
    std::stable_sort(v.begin(), v.end(), [&](const auto& a, const auto& b) {
      return most_correct ? a.correct > b.correct : a.correct < b.correct;
    });
    if (v.size() > 3) v.resize(3);
    return v;
  };
  rep.top_correct_real = top(Truth::real, true);
  rep.top_correct_synthetic = top(Truth::synthetic, true);
  rep.top_incorrect_real = top(Truth::real, false);
  rep.top_incorrect_synthetic = top(Truth::synthetic, false);
  return rep;
}

namespace {

std::string cell(const Interval& iv) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << iv.mean << " [" << iv.lo << ", " << iv.hi << "]";
  return os.str();
}

nlohmann::json interval_json(const Interval& iv) { return {{"mean", iv.mean}, {"lo", iv.lo}, {"hi", iv.hi}, {"n", iv.n}}; }

nlohmann::json tallies_json(const std::vector<ImageTally>& v) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& t : v)
    out.push_back({{"index", t.index}, {"image_id", t.image_id}, {"truth", to_string(t.truth)}, {"correct", t.correct},
                   {"responses", t.responses}});
  return out;
}

}  // namespace

std::string report_csv(const Report& report) {
  std::ostringstream os;
  os << "Class,Accuracy,Sensitivity,Specificity\n";
  for (const auto& r : report.rows)
    os << r.subgroup << ",\"" << cell(r.accuracy) << "\",\"" << cell(r.sensitivity) << "\",\"" << cell(r.specificity)
       << "\"\n";
  return os.str();
}

nlohmann::json to_json(const Report& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"class", r.subgroup},
                    {"accuracy", interval_json(r.accuracy)},
                    {"sensitivity", interval_json(r.sensitivity)},
                    {"specificity", interval_json(r.specificity)}});
  return {{"n_participants", report.n_participants},
          {"ci_method", report.ci_method},
          {"rows", rows},
          {"tallies", tallies_json(report.tallies)},
          {"top_correct_real", tallies_json(report.top_correct_real)},
          {"top_correct_synthetic", tallies_json(report.top_correct_synthetic)},
          {"top_incorrect_real", tallies_json(report.top_incorrect_real)},
          {"top_incorrect_synthetic", tallies_json(report.top_incorrect_synthetic)}};
}

Service::Service(std::filesystem::path state_dir) : dir_(std::move(state_dir)) {
  std::filesystem::create_directories(dir_);
  if (std::ifstream in(dir_ / "definition.json"); in) {
    definition_ = definition_from_json(nlohmann::json::parse(in));
    version_ = version_id(*definition_);
  }
  std::ifstream log(dir_ / "responses.jsonl");
  std::string line;
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    nlohmann::json e;
    try {
      e = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      break;  // torn tail of an interrupted append
    }
    if (e.at("event") == "session") {
      sessions_[e.at("token")] = Session{e.at("token"), e.at("participant_id"), {}};
      session_order_.push_back(e.at("token"));
    } else if (e.at("event") == "response") {
      auto& s = sessions_.at(e.at("token"));
      s.responses.push_back({s.participant_id, e.at("index"), judgment_from_string(e.at("judgment")), e.at("timestamp")});
    }
  }
}

void Service::append_log(const nlohmann::json& event) {
  std::ofstream out(dir_ / "responses.jsonl", std::ios::app);
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to the response log");
}

std::string Service::publish(const TestDefinition& def) {
  const auto violations = composition_violations(def);
  if (!violations.empty()) {
    std::string msg = "test composition invalid:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw std::invalid_argument(msg);
  }
  for (const auto& it : def.items)
    if (!std::filesystem::exists(it.image_path)) throw std::invalid_argument("missing image " + it.image_path.string());
  std::lock_guard lock(mutex_);
  const auto v = version_id(def);
  if (definition_) {
    if (v != version_) throw Conflict("a different test (version " + version_ + ") is already published");
    return version_;
  }
  const auto tmp = dir_ / "definition.json.tmp";
  std::ofstream(tmp) << to_json(def).dump(2) << '\n';
  std::filesystem::rename(tmp, dir_ / "definition.json");
  definition_ = def;
  version_ = v;
  return version_;
}

bool Service::published() const {
  std::lock_guard lock(mutex_);
  return definition_.has_value();
}

std::string Service::create_session(const std::string& participant_id) {
  if (participant_id.empty()) throw std::invalid_argument("participant id is required");
  std::lock_guard lock(mutex_);
  if (!definition_) throw std::logic_error("no test has been published");
  std::string token;
  do token = random_token();
  while (sessions_.count(token));
  append_log({{"event", "session"}, {"token", token}, {"participant_id", participant_id}, {"timestamp", now_iso()}});
  sessions_[token] = Session{token, participant_id, {}};
  session_order_.push_back(token);
  return token;
}

const Session& Service::session_or_throw(const std::string& token) const {
  auto it = sessions_.find(token);
  if (it == sessions_.end()) throw UnknownToken("unknown session token");
  return it->second;
}

std::string Service::read_item_png(std::size_t index) const {
  const auto& path = definition_->items.at(index).image_path;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read item image " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::optional<std::string> Service::current_png(const std::string& token) const {
  std::lock_guard lock(mutex_);
  const auto& s = session_or_throw(token);
  if (s.complete()) return std::nullopt;
  return read_item_png(s.responses.size());
}

nlohmann::json Service::next_item(const std::string& token) const {
  std::lock_guard lock(mutex_);
  const auto& s = session_or_throw(token);
  if (s.complete()) return {{"complete", true}, {"total", kTestLength}};
  const int index = static_cast<int>(s.responses.size());
  return {{"index", index}, {"total", kTestLength}, {"image_png_base64", base64_encode(read_item_png(s.responses.size()))}};
}

void Service::submit_response(const std::string& token, int index, Judgment judgment) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(token);
  if (it == sessions_.end()) throw UnknownToken("unknown session token");
  auto& s = it->second;
  const int expected = static_cast<int>(s.responses.size());
  if (index < 0 || index >= kTestLength) throw std::invalid_argument("item index out of range");
  if (index < expected) throw Conflict("item " + std::to_string(index) + " already answered");
  if (index > expected) throw Conflict("out-of-order response: expected item " + std::to_string(expected));
  ResponseRecord r{s.participant_id, index, judgment, now_iso()};
  append_log({{"event", "response"},
              {"token", token},
              {"participant_id", r.participant_id},
              {"index", index},
              {"judgment", to_string(judgment)},
              {"timestamp", r.timestamp}});
  s.responses.push_back(std::move(r));
}

std::vector<Session> Service::sessions() const {
  std::lock_guard lock(mutex_);
  std::vector<Session> out;
  for (const auto& t : session_order_) out.push_back(sessions_.at(t));
  return out;
}

std::optional<Session> Service::session(const std::string& token) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(token);
  if (it == sessions_.end()) return std::nullopt;
  return it->second;
}

Report Service::report(bool include_incomplete) const {
  std::vector<Session> ss = sessions();
  std::lock_guard lock(mutex_);
  if (!definition_) throw std::logic_error("no test has been published");
  return compute_report(*definition_, ss, include_incomplete);
}

}  // namespace liverdiff::turing
