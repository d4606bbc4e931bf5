#pragma once

#include "ren/autograd.hpp"
#include "ren/checkpoint.hpp"
#include "ren/conditioning.hpp"
#include "ren/config_io.hpp"
#include "ren/datasets.hpp"
#include "ren/errors.hpp"
#include "ren/evaluation.hpp"
#include "ren/gradcheck.hpp"
#include "ren/losses.hpp"
#include "ren/networks.hpp"
#include "ren/random.hpp"
#include "ren/tensor.hpp"
#include "ren/trainer.hpp"
#include "ren/variant.hpp"
