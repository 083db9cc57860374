#pragma once

#include <gmpxx.h>

#include <algorithm>
#include <map>
#include <tuple>
#include <vector>

#include "qdiag/taxonomy.hpp"

namespace qdiag::oracle {

using C = ErrorCategory;

// Hamilton apportionment in exact rationals, written independently.
inline std::map<C, std::size_t> hamilton(const std::map<C, std::size_t>& pool, std::size_t target) {
  mpz_class total = 0;
  for (auto& [c, n] : pool) total += static_cast<unsigned long>(n);
  std::map<C, std::size_t> q;
  std::vector<std::tuple<mpq_class, std::size_t, C>> rems;
  std::size_t given = 0;
  for (auto& [c, n] : pool) {
    mpq_class share(mpz_class(static_cast<unsigned long>(target)) * static_cast<unsigned long>(n), total);
    share.canonicalize();
    mpz_class fl;
    mpz_fdiv_q(fl.get_mpz_t(), share.get_num_mpz_t(), share.get_den_mpz_t());
    q[c] = fl.get_ui();
    given += fl.get_ui();
    rems.emplace_back(share - mpq_class(fl), n, c);
  }
  std::sort(rems.begin(), rems.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) > std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  for (std::size_t i = 0; given < target; ++i, ++given) q[std::get<2>(rems[i])] += 1;
  return q;
}

}  // namespace qdiag::oracle
