#pragma once

#include "precdelta/autograd.hpp"
#include "precdelta/chunkwise.hpp"
#include "precdelta/mqar.hpp"
#include "precdelta/numerics.hpp"
#include "precdelta/parallel.hpp"
#include "precdelta/precond.hpp"
#include "precdelta/rng.hpp"
#include "precdelta/sequential.hpp"
#include "precdelta/theory.hpp"
#include "precdelta/types.hpp"
#include "precdelta/variants.hpp"
