#pragma once

#include "freqnet/errors.hpp"
#include "freqnet/rational.hpp"
#include "freqnet/signature.hpp"
#include "freqnet/formula.hpp"
#include "freqnet/eval.hpp"
#include "freqnet/functions.hpp"
#include "freqnet/diagram.hpp"
#include "freqnet/model.hpp"
#include "freqnet/syntax.hpp"
#include "freqnet/parse.hpp"
#include "freqnet/ground.hpp"
#include "freqnet/inference.hpp"
#include "freqnet/projective.hpp"
#include "freqnet/learn.hpp"
#include "freqnet/experiments.hpp"
