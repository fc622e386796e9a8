#pragma once

#include "spinefuse/detect2d.hpp"
#include "spinefuse/drr.hpp"
#include "spinefuse/error.hpp"
#include "spinefuse/fusion.hpp"
#include "spinefuse/geometry.hpp"
#include "spinefuse/ident2d.hpp"
#include "spinefuse/labels.hpp"
#include "spinefuse/metrics.hpp"
#include "spinefuse/phantom.hpp"
#include "spinefuse/pipeline.hpp"
#include "spinefuse/sequence_dp.hpp"
#include "spinefuse/volume.hpp"
