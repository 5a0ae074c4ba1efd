#pragma once

#include "morphsnn/errors.hpp"
#include "morphsnn/numgrad/matrix.hpp"
#include "morphsnn/numgrad/rng.hpp"
#include "morphsnn/numgrad/softmax.hpp"
#include "morphsnn/numgrad/spectral.hpp"
#include "morphsnn/numgrad/tape.hpp"
#include "morphsnn/neuron.hpp"
#include "morphsnn/spike_tensor.hpp"
#include "morphsnn/stsp.hpp"
#include "morphsnn/diffusion.hpp"
#include "morphsnn/network.hpp"
#include "morphsnn/data.hpp"
#include "morphsnn/training.hpp"
#include "morphsnn/ood.hpp"
#include "morphsnn/energy.hpp"
#include "morphsnn/io.hpp"
