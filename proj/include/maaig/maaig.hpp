#pragma once

#include "maaig/autodiff.hpp"
#include "maaig/checkpoint.hpp"
#include "maaig/clip_io.hpp"
#include "maaig/dataset.hpp"
#include "maaig/metrics.hpp"
#include "maaig/model.hpp"
#include "maaig/random.hpp"
#include "maaig/skeleton.hpp"
#include "maaig/synth.hpp"
#include "maaig/tokenizer.hpp"
#include "maaig/trainer.hpp"
