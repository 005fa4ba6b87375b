#pragma once

#include "blefuse/deadreckoning.hpp"
#include "blefuse/error.hpp"
#include "blefuse/evaluation.hpp"
#include "blefuse/fusion.hpp"
#include "blefuse/geometry.hpp"
#include "blefuse/ingestion.hpp"
#include "blefuse/pathloss.hpp"
#include "blefuse/pipeline.hpp"
#include "blefuse/registry.hpp"
#include "blefuse/rng.hpp"
#include "blefuse/simulator.hpp"
#include "blefuse/trilateration.hpp"
