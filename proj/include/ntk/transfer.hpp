#pragma once

#include "ntk/adversary.hpp"

namespace ntk {

struct TransferRecord {
  std::string source_kind;  // generator tag of the adversarial set
  int t_prime = 0;          // source spawn epoch
  double acc_benign = 0;    // target accuracy on the clean originals
  double acc_on_source = 0; // target accuracy on the source's adversarial set
  double acc_self = 0;      // target accuracy on its own adversarial set
  double tau = 0;
  bool valid = true;        // false when acc_benign == acc_self (zero denominator)
};

struct TransferSource {
  AdversarialBatch batch;
  int t_prime = 0;
};

// tau = (acc_benign - acc_on_source) / (acc_benign - acc_self). The target's
// own attack is generated once with `self_cfg`; tau may exceed 1 and is never
// clamped. A zero denominator flags the record invalid with tau = NaN.
std::vector<TransferRecord> transferability(const DynamicsModel& target,
                                            const std::vector<TransferSource>& sources,
                                            const Tensor& benign, const std::vector<int>& labels,
                                            const PgdConfig& self_cfg, uint64_t self_seed);

// Same, with target-side accuracies supplied directly (arithmetic core).
TransferRecord transfer_record(const std::string& source_kind, int t_prime,
                               double acc_benign, double acc_on_source,
                               double acc_self);

void write_transfer_csv(const std::filesystem::path& file,
                        const std::vector<TransferRecord>& records);

}  // namespace ntk
