#pragma once

// Include cpp-httplib and scrub the glibc resolv.h `_res` macro it drags in,
// which otherwise rewrites Eigen's `Scalar* _res` parameters.

#include <httplib.h>

#ifdef _res
#undef _res
#endif
