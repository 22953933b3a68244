#pragma once

#include <string>
#include <vector>

namespace avfuse {

struct GradcheckResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct GradcheckOptions {
  // Substring filter over check names; empty runs everything.
  std::string scope;
  // Self-test aid: analytic gradients of the named check are sign-flipped
  // before comparison, which must make that check fail.
  std::string flip_sign_check;
};

// Central finite differences (double precision, h = 1e-5) against the
// backward pass, for every autodiff op, every encoder/decoder block, and a
// tiny end-to-end model.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opts = {});

}  // namespace avfuse
