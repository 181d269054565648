#pragma once

#include "oscar/attenuation.hpp"
#include "oscar/correlations.hpp"
#include "oscar/error.hpp"
#include "oscar/inference.hpp"
#include "oscar/interchange.hpp"
#include "oscar/npy.hpp"
#include "oscar/parallel.hpp"
#include "oscar/partitioning.hpp"
#include "oscar/pipeline.hpp"
#include "oscar/random.hpp"
#include "oscar/rank_profiles.hpp"
#include "oscar/rcs.hpp"
#include "oscar/report.hpp"
#include "oscar/synth.hpp"
#include "oscar/tensor.hpp"
