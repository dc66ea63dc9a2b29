#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <gtest/gtest.h>

#include "exgrpo/error.hpp"
#include "exgrpo/report.hpp"
#include "exgrpo/snapshot.hpp"

namespace exgrpo {
namespace {

BufferSnapshot sample_snapshot() {
  BufferSnapshot snap;
  snap.group_size = 8;
  snap.step = 42;
  snap.retired.ids = {3, 7};
  BufferEntry e;
  e.group_size = 8;
  e.success_count = 5;
  Trajectory a;
  a.question_id = 1;
  a.tokens = {2, 1, 0};
  a.behavior_logprobs = {-0.1, -std::numeric_limits<double>::min(), -1.0 / 3.0};
  a.reward = 1;
  a.producer_version = 9;
  a.cached_metric = 0.7123456789012345;
  Trajectory b = a;
  b.tokens = {0};
  b.behavior_logprobs = {-2.5};
  b.cached_metric.reset();
  e.stored = {a, b};
  snap.buffer.entries[1] = e;
  return snap;
}

std::string dump(const BufferSnapshot& snap) {
  std::ostringstream out;
  write_snapshot(out, snap);
  return out.str();
}

BufferSnapshot load(const std::string& text) {
  std::istringstream in(text);
  return read_snapshot(in);
}

std::string error_of(const std::string& text) {
  try {
    load(text);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Snapshot, RoundTripIsBitExact) {
  const BufferSnapshot snap = sample_snapshot();
  const std::string text = dump(snap);
  EXPECT_EQ(load(text), snap);
  EXPECT_EQ(dump(load(text)), text);
}

TEST(Snapshot, EmptyRoundTrip) {
  const BufferSnapshot snap;
  EXPECT_EQ(load(dump(snap)), snap);
}

TEST(Snapshot, TrailingBlankLinesAccepted) {
  const BufferSnapshot snap = sample_snapshot();
  EXPECT_EQ(load(dump(snap) + "\n\n"), snap);
}

TEST(Snapshot, ErrorsNameLineAndByte) {
  const std::string text = dump(sample_snapshot());
  EXPECT_EQ(error_of(""), "snapshot line 0 (byte 0): unexpected end of file, expected header");

  std::string bad_header = text;
  bad_header.replace(0, 22, "exgrpo-buffer-snapshox");
  EXPECT_NE(error_of(bad_header).find("snapshot line 1 (byte 0): expected"), std::string::npos);

  const std::size_t step_pos = text.find("step 42");
  std::string bad_step = text;
  bad_step.replace(step_pos, 7, "step xx");
  EXPECT_EQ(error_of(bad_step),
            "snapshot line 3 (byte " + std::to_string(step_pos) + "): bad integer for step: 'xx'");

  EXPECT_NE(error_of(text + "junk\n").find("unexpected content after last entry"),
            std::string::npos);
  EXPECT_NE(error_of(text.substr(0, text.rfind("traj"))).find("unexpected end of file"),
            std::string::npos);

  std::string version = text;
  version.replace(text.find(" 1\n"), 2, " 2");
  EXPECT_NE(error_of(version).find("unsupported format version 2"), std::string::npos);
}

TEST(Snapshot, DuplicateEntryRejected) {
  BufferSnapshot snap = sample_snapshot();
  snap.buffer.entries[2] = snap.buffer.entries[1];
  std::string text = dump(snap);
  const std::size_t second = text.find("entry 2 ");
  text.replace(second, 8, "entry 1 ");
  EXPECT_NE(error_of(text).find("duplicate entry for question 1"), std::string::npos);
}

TEST(Snapshot, MissingRewardSurvivesForValidation) {
  BufferSnapshot snap = sample_snapshot();
  snap.buffer.entries[1].stored[0].reward.reset();
  const BufferSnapshot back = load(dump(snap));
  EXPECT_FALSE(back.buffer.entries.at(1).stored[0].reward.has_value());
  EXPECT_FALSE(validate_buffer(back.buffer, back.retired).empty());
}

TEST(Report, JsonLineRoundTrip) {
  StepReport r;
  r.step = 17;
  r.pass_at_1 = 0.1 + 0.2;
  r.buffer_size = 12;
  r.retired_size = 3;
  r.mean_entropy = 1.0 / 3.0;
  r.objective_value = -0.0123;
  r.n_experiential = 64;
  r.gate_active = true;
  r.suite_pass_at_1 = 0.4999999999999999;
  r.on_policy_with_replacement = true;
  const std::string line = to_json_line(r);
  EXPECT_EQ(line.rfind("{\"format_version\":1,", 0), 0u);
  EXPECT_EQ(step_report_from_json(line), r);
}

TEST(Report, BadRecords) {
  EXPECT_THROW(step_report_from_json("{"), Error);
  EXPECT_THROW(step_report_from_json("{\"format_version\":1}"), Error);
  StepReport r;
  std::string line = to_json_line(r);
  line.replace(line.find(":1,"), 3, ":2,");
  try {
    step_report_from_json(line);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "unsupported metrics format version");
  }
}

TEST(Report, CsvColumnsMatchHeader) {
  StepReport r;
  r.step = 3;
  const std::string header = csv_header();
  const std::string row = to_csv_row(r);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), std::count(row.begin(), row.end(), ','));
  EXPECT_EQ(row.rfind("1,3,", 0), 0u);
}

}  // namespace
}  // namespace exgrpo
