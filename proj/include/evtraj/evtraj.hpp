#pragma once

#include "evtraj/aggregate.hpp"
#include "evtraj/autodiff.hpp"
#include "evtraj/config.hpp"
#include "evtraj/errors.hpp"
#include "evtraj/evidist.hpp"
#include "evtraj/evloss.hpp"
#include "evtraj/harness.hpp"
#include "evtraj/metrics.hpp"
#include "evtraj/predictor.hpp"
#include "evtraj/scene.hpp"
#include "evtraj/special.hpp"
#include "evtraj/synthgen.hpp"
