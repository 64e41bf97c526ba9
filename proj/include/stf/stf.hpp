#ifndef STF_STF_HPP
#define STF_STF_HPP

#include "stf/common.hpp"
#include "stf/events.hpp"
#include "stf/synth.hpp"
#include "stf/voxel.hpp"
#include "stf/perturb.hpp"
#include "stf/filterlearn.hpp"
#include "stf/filterbank.hpp"
#include "stf/cnn.hpp"
#include "stf/pipeline.hpp"

#endif  // STF_STF_HPP
