#pragma once

#include "liverdiff/dataset.hpp"
#include "liverdiff/stats.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace liverdiff::turing {

enum class Truth { real, synthetic };
enum class Source { real, semantic, class2img };
enum class Judgment { real, synthetic };

std::string to_string(Truth t);
std::string to_string(Source s);
std::string to_string(Judgment j);
Judgment judgment_from_string(const std::string& s);

struct Item {
  std::string image_id;
  Truth truth = Truth::real;
  Source source = Source::real;
  ClassLabel disease_class = ClassLabel::healthy;
  std::filesystem::path image_path;  ///< PNG served to participants
};

struct TestDefinition {
  std::vector<Item> items;
};

inline constexpr int kTestLength = 50;

/// Composition rules: 50 items; 20 real, 15 semantic, 15 class2img; 31
/// unhealthy (13 real, 18 synthetic) and 19 healthy (7 real, 12 synthetic);
/// truth consistent with source; unique image ids.
std::vector<std::string> composition_violations(const TestDefinition& def);

/// Content hash of the ordered item list.
std::string version_id(const TestDefinition& def);

nlohmann::json to_json(const TestDefinition& def);
TestDefinition definition_from_json(const nlohmann::json& j);

struct ResponseRecord {
  std::string participant_id;
  int index = 0;
  Judgment judgment = Judgment::real;
  std::string timestamp;
};

struct Session {
  std::string token;
  std::string participant_id;
  std::vector<ResponseRecord> responses;  ///< in index order
  [[nodiscard]] bool complete() const { return static_cast<int>(responses.size()) == kTestLength; }
};

struct MetricRow {
  std::string subgroup;  ///< unhealthy, healthy, both classes
  Interval accuracy, sensitivity, specificity;
};

struct ImageTally {
  int index = 0;
  std::string image_id;
  Truth truth = Truth::real;
  int correct = 0;
  int responses = 0;
};

struct Report {
  int n_participants = 0;
  std::string ci_method = "two-sided 95% t-interval over participants (n-1 df)";
  std::vector<MetricRow> rows;
  std::vector<ImageTally> tallies;  ///< in test order
  std::vector<ImageTally> top_correct_real, top_correct_synthetic, top_incorrect_real, top_incorrect_synthetic;
};

/// Per-participant accuracy / sensitivity / specificity by subgroup, averaged
/// with t-intervals. Sensitivity is correctness on real items, specificity on
/// synthetic items.
Report compute_report(const TestDefinition& def, const std::vector<Session>& sessions, bool include_incomplete = false);

/// Class,Accuracy,Sensitivity,Specificity with "mean [lo, hi]" cells.
std::string report_csv(const Report& report);
nlohmann::json to_json(const Report& report);

class UnknownToken : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class Conflict : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Published test, sessions, and an append-only response log under one
/// directory. Safe to call from multiple threads.
class Service {
 public:
  explicit Service(std::filesystem::path state_dir);

  /// Freezes the definition. Republishing the same definition returns the
  /// same version; a different one is rejected.
  std::string publish(const TestDefinition& def);
  [[nodiscard]] bool published() const;

  std::string create_session(const std::string& participant_id);
  /// {"index", "total", "image_png_base64"} or {"complete": true, "total"}.
  nlohmann::json next_item(const std::string& token) const;
  /// PNG bytes of the session's current item; nullopt once complete.
  [[nodiscard]] std::optional<std::string> current_png(const std::string& token) const;
  void submit_response(const std::string& token, int index, Judgment judgment);

  [[nodiscard]] Report report(bool include_incomplete = false) const;
  [[nodiscard]] std::vector<Session> sessions() const;
  [[nodiscard]] std::optional<Session> session(const std::string& token) const;

 private:
  void append_log(const nlohmann::json& event);
  const Session& session_or_throw(const std::string& token) const;
  std::string read_item_png(std::size_t index) const;

  std::filesystem::path dir_;
  std::optional<TestDefinition> definition_;
  std::string version_;
  std::map<std::string, Session> sessions_;
  std::vector<std::string> session_order_;
  mutable std::mutex mutex_;
};

}  // namespace liverdiff::turing
