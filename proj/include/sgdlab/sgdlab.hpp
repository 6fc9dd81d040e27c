#pragma once

#include "sgdlab/analysis.hpp"
#include "sgdlab/apt.hpp"
#include "sgdlab/error.hpp"
#include "sgdlab/fit.hpp"
#include "sgdlab/flow.hpp"
#include "sgdlab/parallel.hpp"
#include "sgdlab/random.hpp"
#include "sgdlab/shadowing.hpp"
#include "sgdlab/spectrum.hpp"
#include "sgdlab/stochastic.hpp"
#include "sgdlab/types.hpp"
#include "sgdlab/vectorfield.hpp"
