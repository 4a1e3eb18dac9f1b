#pragma once

#include "edloc/attention_localizer.hpp"
#include "edloc/commands.hpp"
#include "edloc/config.hpp"
#include "edloc/error.hpp"
#include "edloc/eval_harness.hpp"
#include "edloc/feature_assigner.hpp"
#include "edloc/keyvalue.hpp"
#include "edloc/latent_preserver.hpp"
#include "edloc/matrix.hpp"
#include "edloc/pgm.hpp"
#include "edloc/pipeline.hpp"
#include "edloc/record_store.hpp"
#include "edloc/rng.hpp"
#include "edloc/synth_oracle.hpp"
#include "edloc/task_mask.hpp"
#include "edloc/types.hpp"
