#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gfkd {

// One metrics row.  The header and field order are a frozen contract —
// downstream analysis scripts key on the exact bytes.
struct ResultRow {
  std::string run_id;
  std::string phase;
  std::uint64_t seed = 0;
  std::string arm;
  double labeled_fraction = 1.0;
  std::string patch = "-";  // "3" ... or "full", "-" when not applicable
  std::int64_t epoch = 0;
  std::string split;  // "train" | "val"
  double acc = 0.0;
  double miou = 0.0;
  double dsc_mean = 0.0;
  double hd_mean = 0.0;
  std::size_t params = 0;
  std::size_t flops = 0;
};

extern const char* const kCsvHeader;

// %.9g for reals, LF line endings, no trailing separator
std::string format_row(const ResultRow& row);

// Writes header + rows.  Rejects duplicate (run_id, seed, arm, epoch, split)
// tuples — every row must be addressable.
void write_csv(const std::string& path, const std::vector<ResultRow>& rows);

}  // namespace gfkd
