#pragma once

#include <string>
#include <vector>

#include "gfkd/params.hpp"

namespace gfkd {

// Versioned binary checkpoint, little-endian throughout:
//   magic "GFKD" | format version u16 | entry count u64 |
//   per entry: name length u32, UTF-8 name, rank u32, extents u64[rank],
//              values f64[product(extents)]
// Round-trips are bit-exact; u64 payloads (RNG state, config hash) travel as
// doubles via bit reinterpretation, which survives because nothing ever does
// arithmetic on them.
inline constexpr std::uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<ParamStore::Entry>& entries);
std::vector<ParamStore::Entry> load_checkpoint(const std::string& path);

// helpers for composing checkpoint payloads
std::vector<ParamStore::Entry> store_entries(const ParamStore& store,
                                             const std::string& prefix = "");
void load_into_store(ParamStore& store, const std::vector<ParamStore::Entry>& entries,
                     const std::string& prefix = "");

double u64_as_double(std::uint64_t x);
std::uint64_t double_as_u64(double x);

}  // namespace gfkd
