#pragma once

#include "flowpad/common.hpp"
#include "flowpad/config.hpp"
#include "flowpad/distill.hpp"
#include "flowpad/flow.hpp"
#include "flowpad/gradcam.hpp"
#include "flowpad/image.hpp"
#include "flowpad/ingest.hpp"
#include "flowpad/metrics.hpp"
#include "flowpad/models.hpp"
#include "flowpad/nn.hpp"
#include "flowpad/preprocess.hpp"
#include "flowpad/synth.hpp"
