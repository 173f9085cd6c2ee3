#pragma once

#include "attack.hpp"
#include "audit.hpp"
#include "context_mix.hpp"
#include "corpus.hpp"
#include "decoder.hpp"
#include "detector.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "parallel.hpp"
#include "parity.hpp"
#include "predictor.hpp"
#include "records.hpp"
#include "rng.hpp"
#include "strategy.hpp"
