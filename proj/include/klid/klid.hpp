#pragma once

// Convenience umbrella: pulls in the whole library.

#include "klid/attacks.hpp"
#include "klid/dataset.hpp"
#include "klid/dsvm.hpp"
#include "klid/experiment.hpp"
#include "klid/kernel.hpp"
#include "klid/lid.hpp"
#include "klid/random.hpp"
#include "klid/serialize.hpp"
#include "klid/stats.hpp"
#include "klid/svm.hpp"
#include "klid/weighting.hpp"
