#pragma once

#include "fsmnet/error.hpp"
#include "fsmnet/tensor.hpp"
#include "fsmnet/fft.hpp"
#include "fsmnet/kspace.hpp"
#include "fsmnet/phantom.hpp"
#include "fsmnet/autograd.hpp"
#include "fsmnet/parameters.hpp"
#include "fsmnet/fsfe.hpp"
#include "fsmnet/fusion.hpp"
#include "fsmnet/model.hpp"
#include "fsmnet/losses.hpp"
#include "fsmnet/metrics.hpp"
#include "fsmnet/optim.hpp"
#include "fsmnet/trainer.hpp"
