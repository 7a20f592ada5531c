#include "gfkd/csv.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <tuple>

#include "gfkd/error.hpp"

namespace gfkd {

const char* const kCsvHeader =
    "run_id,phase,seed,arm,labeled_fraction,patch,epoch,split,acc,miou,dsc_mean,"
    "hd_mean,params,flops";

namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string format_row(const ResultRow& r) {
  std::string out;
  out += r.run_id;
  out += ',';
  out += r.phase;
  out += ',';
  out += std::to_string(r.seed);
  out += ',';
  out += r.arm;
  out += ',';
  out += real(r.labeled_fraction);
  out += ',';
  out += r.patch;
  out += ',';
  out += std::to_string(r.epoch);
  out += ',';
  out += r.split;
  out += ',';
  out += real(r.acc);
  out += ',';
  out += real(r.miou);
  out += ',';
  out += real(r.dsc_mean);
  out += ',';
  out += real(r.hd_mean);
  out += ',';
  out += std::to_string(r.params);
  out += ',';
  out += std::to_string(r.flops);
  return out;
}

void write_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::set<std::tuple<std::string, std::uint64_t, std::string, std::int64_t,
                      std::string>>
      seen;
  for (const auto& r : rows)
    if (!seen.insert({r.run_id, r.seed, r.arm, r.epoch, r.split}).second)
      throw ValidationError("csv: duplicate row key " + r.run_id + "/" +
                            std::to_string(r.seed) + "/" + r.arm + "/" +
                            std::to_string(r.epoch) + "/" + r.split);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("csv: cannot open " + path + " for writing");
  os << kCsvHeader << '\n';
  for (const auto& r : rows) os << format_row(r) << '\n';
  os.flush();
  if (!os) throw ValidationError("csv: write to " + path + " failed");
}

}  // namespace gfkd
