#pragma once

// Umbrella header.

#include "mlayer/certify.hpp"
#include "mlayer/expm.hpp"
#include "mlayer/io.hpp"
#include "mlayer/matrix.hpp"
#include "mlayer/model.hpp"
#include "mlayer/polycompile.hpp"
#include "mlayer/rng.hpp"
#include "mlayer/tasks.hpp"
#include "mlayer/train.hpp"
