#pragma once

#include <functional>
#include <vector>

#include "pcagee/mortality_data.hpp"

namespace fixture {

/// Panel whose log rate at (population index, age, year) is `f(...)`.
inline pcagee::MortalityPanel panel(const std::vector<pcagee::Population>& pops, int age_min, int age_max,
                                    int year_first, int year_last,
                                    const std::function<double(std::size_t, int, int)>& f) {
  pcagee::MortalityPanel p;
  p.populations = pops;
  p.age_min = age_min;
  p.age_max = age_max;
  p.year_first = year_first;
  p.year_last = year_last;
  for (std::size_t i = 0; i < pops.size(); ++i) {
    Eigen::MatrixXd y(p.n_ages(), p.n_years());
    for (int a = age_min; a <= age_max; ++a)
      for (int t = year_first; t <= year_last; ++t) y(a - age_min, t - year_first) = f(i, a, t);
    p.log_rates.push_back(y);
  }
  return p;
}

}  // namespace fixture
