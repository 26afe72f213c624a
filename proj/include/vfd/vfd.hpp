#pragma once

#include "vfd/attacks.hpp"
#include "vfd/checkpoint.hpp"
#include "vfd/data.hpp"
#include "vfd/errors.hpp"
#include "vfd/evalkit.hpp"
#include "vfd/io.hpp"
#include "vfd/losses.hpp"
#include "vfd/models.hpp"
#include "vfd/ops.hpp"
#include "vfd/optim.hpp"
#include "vfd/tensor.hpp"
#include "vfd/trainer.hpp"
