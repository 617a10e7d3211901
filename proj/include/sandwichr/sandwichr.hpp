#pragma once

#include "sandwichr/config.hpp"
#include "sandwichr/corpus.hpp"
#include "sandwichr/evaluator.hpp"
#include "sandwichr/format.hpp"
#include "sandwichr/http_backend.hpp"
#include "sandwichr/modelio.hpp"
#include "sandwichr/rewards.hpp"
#include "sandwichr/rng.hpp"
#include "sandwichr/sampler.hpp"
#include "sandwichr/simlab.hpp"
#include "sandwichr/textedit.hpp"
#include "sandwichr/unicode.hpp"
