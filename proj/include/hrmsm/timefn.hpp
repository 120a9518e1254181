#pragma once

#include <map>
#include <string>

#include "hrmsm/errors.hpp"

namespace hrmsm {

// Calendar-style mappings of the time index. Both built-ins are defined on
// the view time t and look at the period containing t+1 (the period the
// outcome falls in):
//   year(origin, per):  floor((t+1-origin)/per)
//   season(per, split): 1 if ((t+1-origin) mod per) < split, else 0
struct TimeFn {
  enum class Kind { year, season };
  Kind kind = Kind::year;
  int origin = 0;
  int per = 4;
  int split = 2;

  double eval(int t) const {
    const int u = t + 1 - origin;
    if (kind == Kind::year) {
      // Floor division that stays correct for u < 0.
      int q = u / per;
      if (u % per != 0 && ((u < 0) != (per < 0))) --q;
      return static_cast<double>(q);
    }
    int m = u % per;
    if (m < 0) m += per;
    return m < split ? 1.0 : 0.0;
  }
};

class TimeFnRegistry {
 public:
  // "year" and "season" with quarter defaults are always present; configs may
  // override them or add more names.
  TimeFnRegistry() {
    fns_["year"] = TimeFn{TimeFn::Kind::year, 0, 4, 0};
    fns_["season"] = TimeFn{TimeFn::Kind::season, 0, 4, 2};
  }

  void set(const std::string& name, TimeFn fn) { fns_[name] = fn; }

  bool has(const std::string& name) const { return fns_.count(name) > 0; }

  double eval(const std::string& name, int t) const {
    auto it = fns_.find(name);
    if (it == fns_.end()) throw ValidationError("unknown time function '" + name + "'");
    return it->second.eval(t);
  }

 private:
  std::map<std::string, TimeFn> fns_;
};

}  // namespace hrmsm
