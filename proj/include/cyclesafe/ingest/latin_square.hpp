#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace cyclesafe::ingest {

/// Cyclic Latin-square schedule. Batches are grouped into squares of n_labellers; within square s,
/// labeller i labels batch (i + r) mod n in round r. Row i lists the batches labeller i receives.
inline std::vector<std::vector<std::string>> latin_square_assignment(int n_labellers,
                                                                     const std::vector<std::string>& batches) {
  if (n_labellers < 2) throw std::invalid_argument("need at least 2 labellers");
  const auto n = static_cast<std::size_t>(n_labellers);
  if (batches.empty() || batches.size() % n != 0)
    throw std::invalid_argument("batch count not a multiple of labeller count");
  std::vector<std::vector<std::string>> rows(n);
  for (std::size_t s = 0; s < batches.size() / n; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t r = 0; r < n; ++r) rows[i].push_back(batches[s * n + (i + r) % n]);
  return rows;
}

}  // namespace cyclesafe::ingest
