#pragma once

#include "fedtta/datagen.hpp"
#include "fedtta/federation.hpp"
#include "fedtta/harness.hpp"
#include "fedtta/matrix.hpp"
#include "fedtta/metrics.hpp"
#include "fedtta/nn.hpp"
#include "fedtta/serialize.hpp"
#include "fedtta/tta.hpp"
