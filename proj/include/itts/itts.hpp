#pragma once

// Umbrella header.

#include "itts/common.hpp"
#include "itts/tensor.hpp"
#include "itts/autograd.hpp"
#include "itts/params.hpp"
#include "itts/nn.hpp"
#include "itts/corpus.hpp"
#include "itts/segmenting.hpp"
#include "itts/lm.hpp"
#include "itts/tts.hpp"
#include "itts/distill.hpp"
#include "itts/pipeline.hpp"
#include "itts/evalbench.hpp"
#include "itts/config.hpp"
#include "itts/stages.hpp"
