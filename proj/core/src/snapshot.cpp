#include "exgrpo/snapshot.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "exgrpo/error.hpp"

namespace exgrpo {

namespace {

std::string hex(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::hex);
  return std::string(buf, res.ptr);
}

class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next() {
    offset_ = consumed_;
    if (!std::getline(in_, line_)) return false;
    consumed_ += line_.size() + 1;
    ++line_no_;
    fields_.clear();
    std::istringstream ss(line_);
    std::string f;
    while (ss >> f) fields_.push_back(f);
    cursor_ = 0;
    return true;
  }

  void expect_next(const char* what) {
    if (!next()) fail(std::string("unexpected end of file, expected ") + what);
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error("snapshot line " + std::to_string(line_no_) + " (byte " +
                std::to_string(offset_) + "): " + msg);
  }

  const std::string& word(const char* what) {
    if (cursor_ >= fields_.size()) fail(std::string("missing ") + what);
    return fields_[cursor_++];
  }

  void keyword(const char* kw) {
    const std::string& w = word(kw);
    if (w != kw) fail("expected '" + std::string(kw) + "', found '" + w + "'");
  }

  template <typename T>
  T integer(const char* what) {
    const std::string& w = word(what);
    T value{};
    const auto res = std::from_chars(w.data(), w.data() + w.size(), value);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) {
      fail(std::string("bad integer for ") + what + ": '" + w + "'");
    }
    return value;
  }

  double real(const char* what) {
    const std::string& w = word(what);
    double value = 0.0;
    const auto res = std::from_chars(w.data(), w.data() + w.size(), value,
                                     std::chars_format::hex);
    if (res.ec != std::errc() || res.ptr != w.data() + w.size()) {
      fail(std::string("bad hex float for ") + what + ": '" + w + "'");
    }
    return value;
  }

  bool blank() const { return fields_.empty(); }

  void end_of_line() {
    if (cursor_ != fields_.size()) fail("trailing fields");
  }

 private:
  std::istream& in_;
  std::string line_;
  std::vector<std::string> fields_;
  std::size_t cursor_ = 0;
  std::size_t line_no_ = 0;
  std::size_t offset_ = 0;
  std::size_t consumed_ = 0;
};

}  // namespace

void write_snapshot(std::ostream& out, const BufferSnapshot& snap) {
  out << "exgrpo-buffer-snapshot " << snap.format_version << '\n';
  out << "group_size " << snap.group_size << '\n';
  out << "step " << snap.step << '\n';
  out << "capacity " << snap.buffer.capacity_per_question << '\n';
  out << "retired " << snap.retired.ids.size();
  for (QuestionId id : snap.retired.ids) out << ' ' << id;
  out << '\n';
  out << "entries " << snap.buffer.entries.size() << '\n';
  for (const auto& [id, entry] : snap.buffer.entries) {
    out << "entry " << id << ' ' << entry.success_count << ' '
        << entry.group_size << ' ' << entry.stored.size() << '\n';
    for (const Trajectory& t : entry.stored) {
      // a missing reward is written as -1 so validation can flag it
      out << "traj " << t.producer_version << ' ' << t.reward.value_or(-1) << ' '
          << (t.cached_metric ? hex(*t.cached_metric) : std::string("-")) << ' '
          << t.tokens.size();
      for (Token tok : t.tokens) out << ' ' << tok;
      for (double lp : t.behavior_logprobs) out << ' ' << hex(lp);
      out << '\n';
    }
  }
}

BufferSnapshot read_snapshot(std::istream& in) {
  LineReader r(in);
  BufferSnapshot snap;
  r.expect_next("header");
  r.keyword("exgrpo-buffer-snapshot");
  snap.format_version = r.integer<int>("format version");
  if (snap.format_version != kSnapshotFormatVersion) {
    r.fail("unsupported format version " + std::to_string(snap.format_version));
  }
  r.end_of_line();

  r.expect_next("group_size");
  r.keyword("group_size");
  snap.group_size = r.integer<std::size_t>("group_size");
  r.end_of_line();

  r.expect_next("step");
  r.keyword("step");
  snap.step = r.integer<std::uint64_t>("step");
  r.end_of_line();

  r.expect_next("capacity");
  r.keyword("capacity");
  snap.buffer.capacity_per_question = r.integer<std::size_t>("capacity");
  r.end_of_line();

  r.expect_next("retired");
  r.keyword("retired");
  const auto n_retired = r.integer<std::size_t>("retired count");
  for (std::size_t i = 0; i < n_retired; ++i) {
    snap.retired.ids.insert(r.integer<QuestionId>("retired id"));
  }
  r.end_of_line();
  if (snap.retired.ids.size() != n_retired) r.fail("duplicate retired id");

  r.expect_next("entries");
  r.keyword("entries");
  const auto n_entries = r.integer<std::size_t>("entry count");
  r.end_of_line();

  for (std::size_t e = 0; e < n_entries; ++e) {
    r.expect_next("entry");
    r.keyword("entry");
    const auto id = r.integer<QuestionId>("question id");
    BufferEntry entry;
    entry.success_count = r.integer<std::size_t>("success count");
    entry.group_size = r.integer<std::size_t>("group size");
    const auto n_traj = r.integer<std::size_t>("trajectory count");
    r.end_of_line();
    for (std::size_t i = 0; i < n_traj; ++i) {
      r.expect_next("traj");
      r.keyword("traj");
      Trajectory t;
      t.question_id = id;
      t.producer_version = r.integer<std::uint64_t>("producer version");
      const int reward = r.integer<int>("reward");
      if (reward >= 0) t.reward = reward;
      const std::string& metric = r.word("metric");
      if (metric != "-") {
        double m = 0.0;
        const auto res = std::from_chars(metric.data(), metric.data() + metric.size(),
                                         m, std::chars_format::hex);
        if (res.ec != std::errc() || res.ptr != metric.data() + metric.size()) {
          r.fail("bad hex float for metric: '" + metric + "'");
        }
        t.cached_metric = m;
      }
      const auto len = r.integer<std::size_t>("length");
      t.tokens.reserve(len);
      for (std::size_t j = 0; j < len; ++j) t.tokens.push_back(r.integer<Token>("token"));
      t.behavior_logprobs.reserve(len);
      for (std::size_t j = 0; j < len; ++j) t.behavior_logprobs.push_back(r.real("log-prob"));
      r.end_of_line();
      entry.stored.push_back(std::move(t));
    }
    if (!snap.buffer.entries.emplace(id, std::move(entry)).second) {
      r.fail("duplicate entry for question " + std::to_string(id));
    }
  }
  while (r.next()) {
    if (!r.blank()) r.fail("unexpected content after last entry");
  }
  return snap;
}

}  // namespace exgrpo
