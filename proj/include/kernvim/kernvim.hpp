#pragma once

#include "kernvim/cme.hpp"
#include "kernvim/common.hpp"
#include "kernvim/estimator.hpp"
#include "kernvim/inference.hpp"
#include "kernvim/io.hpp"
#include "kernvim/kernel.hpp"
#include "kernvim/measures.hpp"
#include "kernvim/nuisance.hpp"
#include "kernvim/pipeline.hpp"
#include "kernvim/simulate.hpp"
