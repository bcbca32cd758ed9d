#pragma once

// Umbrella header for the offline parts of the library. Network clients live in backends.hpp,
// and the local API in service.hpp.

#include "iotminer/clustering.hpp"
#include "iotminer/error.hpp"
#include "iotminer/evaluation.hpp"
#include "iotminer/eventlog.hpp"
#include "iotminer/featurization.hpp"
#include "iotminer/ingestion.hpp"
#include "iotminer/labeling.hpp"
#include "iotminer/matrix.hpp"
#include "iotminer/pipeline.hpp"
#include "iotminer/profiling.hpp"
#include "iotminer/stats.hpp"
#include "iotminer/synthgen.hpp"
#include "iotminer/text.hpp"
#include "iotminer/time.hpp"
#include "iotminer/validity.hpp"
