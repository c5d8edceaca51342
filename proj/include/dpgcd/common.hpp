#pragma once
#include <stdexcept>
#include <string>

namespace dpgcd {

// Error taxonomy. Every throw in the library uses one of these so callers
// (and tests) can tell shape bugs from bad data from API misuse.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct dim_error : error { using error::error; };         // shape/extent mismatch
struct config_error : error { using error::error; };      // invalid configuration request
struct data_error : error { using error::error; };        // bad input data
struct numeric_error : error { using error::error; };     // non-finite value where finite required
struct contract_error : error { using error::error; };    // API misuse
struct internal_error : error { using error::error; };    // broken invariant, i.e. a bug
struct io_error : error { using error::error; };
struct generation_error : error { using error::error; };  // synthetic scene placement failure
struct checkpoint_error : error { using error::error; };

inline void require(bool cond, const char* msg) {
  if (!cond) throw contract_error(msg);
}

}  // namespace dpgcd
