#pragma once

// Text record stream, one line per recorded trial:
//
//   # dlcz-lab records
//   # format_version=1
//   # kind=entangle
//   # ...more key=value header lines...
//   #! <resolved config line>
//   trial_index,herald,mode,phase_index,click_2a,click_2b
//   17,0,S,0,1,0
//   ...
//   # end n_records=<count>
//
// herald is 0 (D1a), 1 (D1b) or '-' (none). The footer makes truncation
// detectable.

#include "dlcz/engine.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace dlcz::engine {

inline constexpr int kRecordFormatVersion = 1;

struct RecordHeader {
  RunKind kind = RunKind::entangle;
  std::uint64_t seed = 0;
  std::uint64_t n_trials = 0;
  std::string config_hash;
  Ensemble ensemble = Ensemble::U;
  std::vector<double> phases;
  std::string config_text;  // resolved config echoed for re-analysis
};

struct RecordSet {
  RecordHeader header;
  std::vector<TrialRecord> records;
};

class RecordWriter {
 public:
  RecordWriter(std::ostream& out, const RecordHeader& header);
  void write(const TrialRecord& record);
  void finish();
  std::uint64_t count() const noexcept { return count_; }

 private:
  std::ostream& out_;
  std::uint64_t count_ = 0;
  bool finished_ = false;
};

/// Throws RecordFormatError with a line number on any malformed or missing
/// content, including a missing footer.
RecordSet read_records(std::istream& in);
RecordSet read_records_file(const std::string& path);

std::string to_string(RunKind kind);
std::string to_string(Ensemble ensemble);

}  // namespace dlcz::engine
