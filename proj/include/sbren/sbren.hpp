#ifndef SBREN_SBREN_HPP
#define SBREN_SBREN_HPP

// Umbrella header: the whole construction kit in dependency order.
#include "sbren/core.hpp"
#include "sbren/grid.hpp"
#include "sbren/fock.hpp"
#include "sbren/dressing.hpp"
#include "sbren/spin_form.hpp"
#include "sbren/hamiltonian.hpp"
#include "sbren/io.hpp"
#include "sbren/flow.hpp"

#endif
