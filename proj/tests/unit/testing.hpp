#pragma once

#include <torch/torch.h>

// c10 ships its own CHECK macro.
#ifdef CHECK
#undef CHECK
#endif
#include <doctest.h>
