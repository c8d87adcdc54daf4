#pragma once

#include "epruner/affinity_propagation.hpp"
#include "epruner/architecture.hpp"
#include "epruner/builtin_architectures.hpp"
#include "epruner/bundle.hpp"
#include "epruner/error.hpp"
#include "epruner/metrics.hpp"
#include "epruner/parallel.hpp"
#include "epruner/planner.hpp"
#include "epruner/random.hpp"
#include "epruner/tensor.hpp"
#include "epruner/weight_init.hpp"
