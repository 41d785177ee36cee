#pragma once

#include "histosim/classical_metrics.hpp"
#include "histosim/core_data.hpp"
#include "histosim/curation.hpp"
#include "histosim/deep_metrics.hpp"
#include "histosim/error.hpp"
#include "histosim/evaluation.hpp"
#include "histosim/feature_extraction.hpp"
#include "histosim/fsim.hpp"
#include "histosim/haps.hpp"
#include "histosim/image_io.hpp"
#include "histosim/metrics.hpp"
#include "histosim/plot.hpp"
#include "histosim/preprocess.hpp"
#include "histosim/robustness.hpp"
#include "histosim/util.hpp"
