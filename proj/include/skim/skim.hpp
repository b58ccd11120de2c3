#pragma once

#include "skim/allocation.hpp"
#include "skim/calibration.hpp"
#include "skim/half.hpp"
#include "skim/kmeans1d.hpp"
#include "skim/matrix.hpp"
#include "skim/packing.hpp"
#include "skim/parallel.hpp"
#include "skim/pipeline.hpp"
#include "skim/random.hpp"
#include "skim/scaling.hpp"
#include "skim/tensor_store.hpp"
