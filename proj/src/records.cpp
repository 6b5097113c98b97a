#include "dlcz/records.hpp"

#include "dlcz/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dlcz::engine {

namespace {

constexpr const char* kColumns = "trial_index,herald,mode,phase_index,click_2a,click_2b";

std::string format_phase(double phi) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", phi);
  return buf;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw RecordFormatError("records line " + std::to_string(line) + ": " + what);
}

std::uint64_t parse_u64(std::string_view text, std::size_t line, const char* field) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    fail(line, std::string("bad ") + field + " '" + std::string(text) + "'");
  }
  return v;
}

bool parse_bit(std::string_view text, std::size_t line, const char* field) {
  if (text == "0") return false;
  if (text == "1") return true;
  fail(line, std::string("bad ") + field + " '" + std::string(text) + "'");
}

TrialRecord parse_record(const std::string& text, std::size_t line) {
  std::vector<std::string_view> cols;
  std::string_view rest(text);
  while (true) {
    const auto comma = rest.find(',');
    cols.push_back(rest.substr(0, comma));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (cols.size() != 6) fail(line, "expected 6 columns, got " + std::to_string(cols.size()));
  TrialRecord rec;
  rec.trial_index = parse_u64(cols[0], line, "trial_index");
  if (cols[1] == "0") {
    rec.herald = Herald::d1a;
  } else if (cols[1] == "1") {
    rec.herald = Herald::d1b;
  } else if (cols[1] == "-") {
    rec.herald = Herald::none;
  } else {
    fail(line, "bad herald '" + std::string(cols[1]) + "'");
  }
  if (cols[2] != "S" && cols[2] != "I" && cols[2] != "C") fail(line, "bad mode '" + std::string(cols[2]) + "'");
  rec.mode = cols[2][0];
  rec.phase_index = static_cast<std::uint32_t>(parse_u64(cols[3], line, "phase_index"));
  rec.click_2a = parse_bit(cols[4], line, "click_2a");
  rec.click_2b = parse_bit(cols[5], line, "click_2b");
  return rec;
}

}  // namespace

std::string to_string(RunKind kind) { return kind == RunKind::entangle ? "entangle" : "characterize"; }
std::string to_string(Ensemble ensemble) { return ensemble == Ensemble::U ? "U" : "D"; }

RecordWriter::RecordWriter(std::ostream& out, const RecordHeader& header) : out_(out) {
  out_ << "# dlcz-lab records\n";
  out_ << "# format_version=" << kRecordFormatVersion << '\n';
  out_ << "# kind=" << to_string(header.kind) << '\n';
  out_ << "# seed=" << header.seed << '\n';
  out_ << "# config_hash=" << header.config_hash << '\n';
  out_ << "# n_trials=" << header.n_trials << '\n';
  out_ << "# ensemble=" << to_string(header.ensemble) << '\n';
  out_ << "# phases=";
  for (std::size_t k = 0; k < header.phases.size(); ++k) out_ << (k ? "," : "") << format_phase(header.phases[k]);
  out_ << '\n';
  std::istringstream config(header.config_text);
  for (std::string line; std::getline(config, line);) out_ << "#! " << line << '\n';
  out_ << kColumns << '\n';
}

void RecordWriter::write(const TrialRecord& r) {
  out_ << r.trial_index << ',';
  if (r.herald == Herald::none) {
    out_ << '-';
  } else {
    out_ << static_cast<int>(r.herald);
  }
  out_ << ',' << r.mode << ',' << r.phase_index << ',' << (r.click_2a ? '1' : '0') << ','
       << (r.click_2b ? '1' : '0') << '\n';
  ++count_;
}

void RecordWriter::finish() {
  if (finished_) return;
  out_ << "# end n_records=" << count_ << '\n';
  out_.flush();
  finished_ = true;
}

RecordSet read_records(std::istream& in) {
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(std::move(line));
  // Check the footer before parsing so a file cut mid-line reports truncation.
  if (lines.empty() || lines.back().rfind("# end n_records=", 0) != 0) {
    throw RecordFormatError("record file truncated: end-of-records footer missing after line " +
                            std::to_string(lines.size()));
  }

  RecordSet set;
  std::map<std::string, std::string> header;
  bool columns_seen = false;
  const std::size_t footer_line = lines.size();
  for (std::size_t k = 0; k + 1 < lines.size(); ++k) {
    const std::string& line = lines[k];
    const std::size_t line_no = k + 1;
    if (!columns_seen) {
      if (line_no == 1) {
        if (line != "# dlcz-lab records") fail(line_no, "not a dlcz-lab record file");
        continue;
      }
      if (line.rfind("#! ", 0) == 0) {
        set.header.config_text += line.substr(3) + '\n';
      } else if (line.rfind("# ", 0) == 0) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "header line without key=value");
        header[line.substr(2, eq - 2)] = line.substr(eq + 1);
      } else if (line == kColumns) {
        columns_seen = true;
      } else {
        fail(line_no, "unexpected header content");
      }
      continue;
    }
    set.records.push_back(parse_record(line, line_no));
  }
  if (!columns_seen) fail(footer_line, "missing column header");
  const std::uint64_t footer_count =
      parse_u64(std::string_view(lines.back()).substr(16), footer_line, "record count");
  if (footer_count != set.records.size()) {
    throw RecordFormatError("record file truncated: footer reports " + std::to_string(footer_count) +
                            " records, found " + std::to_string(set.records.size()));
  }

  auto need = [&](const char* key) -> const std::string& {
    const auto it = header.find(key);
    if (it == header.end()) throw RecordFormatError(std::string("record header missing '") + key + "'");
    return it->second;
  };
  if (need("format_version") != std::to_string(kRecordFormatVersion)) {
    throw RecordFormatError("unsupported record format_version " + need("format_version"));
  }
  const auto& kind = need("kind");
  if (kind == "entangle") {
    set.header.kind = RunKind::entangle;
  } else if (kind == "characterize") {
    set.header.kind = RunKind::characterize;
  } else {
    throw RecordFormatError("unknown record kind '" + kind + "'");
  }
  set.header.seed = parse_u64(need("seed"), 0, "seed");
  set.header.n_trials = parse_u64(need("n_trials"), 0, "n_trials");
  set.header.config_hash = need("config_hash");
  set.header.ensemble = need("ensemble") == "D" ? Ensemble::D : Ensemble::U;
  const auto& phases = need("phases");
  std::istringstream ps(phases);
  for (std::string tok; std::getline(ps, tok, ',');) {
    if (!tok.empty()) set.header.phases.push_back(std::stod(tok));
  }
  for (const auto& r : set.records) {
    if (r.trial_index >= set.header.n_trials) throw RecordFormatError("trial_index beyond n_trials");
  }
  return set;
}

RecordSet read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RecordFormatError("cannot open record file " + path);
  return read_records(in);
}

}  // namespace dlcz::engine
