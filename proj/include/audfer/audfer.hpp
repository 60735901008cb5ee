#pragma once

#include "audfer/domain.hpp"
#include "audfer/error.hpp"
#include "audfer/harness.hpp"
#include "audfer/ingest.hpp"
#include "audfer/knowledge.hpp"
#include "audfer/labeling.hpp"
#include "audfer/loss.hpp"
#include "audfer/model.hpp"
#include "audfer/synth.hpp"
