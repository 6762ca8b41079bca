/* Copyright 2026 The HAL Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef HAL_GRADCHECK_HPP_
#define HAL_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "hal/autodiff.hpp"

namespace hal {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]: analytic vs numeric"
  int checked = 0;

  bool passed(double tolerance) const { return checked > 0 && max_rel_err < tolerance; }
};

// Compares the tape gradient of a scalar-valued function against central
// finite differences over every element of the given parameters. The error
// metric is |a - n| / max(|a|, |n|, 1); the unit floor keeps float32 forward
// noise from dominating near-zero gradients. The default step is dyadic and
// the divisor uses the step actually realized after float32 rounding.
inline GradCheckReport grad_check(const std::function<Tape::Ref(Tape&)>& fn, std::vector<Parameter*> params,
                                  double h = 0x1.0p-8) {
  GradCheckReport report;
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Tape::Ref loss = fn(tape);
    tape.backward(loss);
  }
  std::vector<std::vector<float>> analytic;
  for (Parameter* p : params)
    analytic.emplace_back(p->value.grad(), p->value.grad() + p->value.numel());

  auto eval = [&]() {
    Tape tape;
    return double(tape.value(fn(tape))[0]);
  };

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      const float saved = p->value[i];
      const float plus = float(double(saved) + h);
      const float minus = float(double(saved) - h);
      p->value[i] = plus;
      const double fp = eval();
      p->value[i] = minus;
      const double fm = eval();
      p->value[i] = saved;
      const double numeric = (fp - fm) / (double(plus) - double(minus));
      const double a = double(analytic[pi][size_t(i)]);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = str_cat(p->name, "[", i, "]: analytic ", a, " vs numeric ", numeric);
      }
    }
  }
  return report;
}

}  // namespace hal

#endif  // HAL_GRADCHECK_HPP_
