#pragma once

// Convenience header pulling in every module.

#include "pvinspect/corrupt.hpp"
#include "pvinspect/curate.hpp"
#include "pvinspect/error.hpp"
#include "pvinspect/eval.hpp"
#include "pvinspect/parallel.hpp"
#include "pvinspect/random.hpp"
#include "pvinspect/raster.hpp"
#include "pvinspect/report.hpp"
#include "pvinspect/reward.hpp"
#include "pvinspect/rl.hpp"
#include "pvinspect/taxonomy.hpp"
#include "pvinspect/tta.hpp"

namespace pvinspect {

inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace pvinspect
