#pragma once

#include "mathbook/canonical.hpp"
#include "mathbook/clustering.hpp"
#include "mathbook/config.hpp"
#include "mathbook/curriculum.hpp"
#include "mathbook/error.hpp"
#include "mathbook/eval.hpp"
#include "mathbook/grpo.hpp"
#include "mathbook/json_io.hpp"
#include "mathbook/knowledge_store.hpp"
#include "mathbook/pipeline.hpp"
#include "mathbook/policy.hpp"
#include "mathbook/problem_corpus.hpp"
#include "mathbook/reward.hpp"
#include "mathbook/rng.hpp"
