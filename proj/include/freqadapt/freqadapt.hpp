#pragma once

#include "freqadapt/baseline_augment.hpp"
#include "freqadapt/config.hpp"
#include "freqadapt/dymix.hpp"
#include "freqadapt/errors.hpp"
#include "freqadapt/fft.hpp"
#include "freqadapt/freq_augment.hpp"
#include "freqadapt/metrics.hpp"
#include "freqadapt/neural/adam.hpp"
#include "freqadapt/neural/checkpoint.hpp"
#include "freqadapt/neural/grad_check.hpp"
#include "freqadapt/neural/layers.hpp"
#include "freqadapt/neural/model.hpp"
#include "freqadapt/neural/objectives.hpp"
#include "freqadapt/neural/tensor.hpp"
#include "freqadapt/pipeline.hpp"
#include "freqadapt/rng.hpp"
#include "freqadapt/spectral.hpp"
#include "freqadapt/synth.hpp"
#include "freqadapt/volume.hpp"
