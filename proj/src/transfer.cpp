#include "ntk/transfer.hpp"

#include <fstream>
#include <limits>

#include "ntk/format.hpp"

namespace ntk {

TransferRecord transfer_record(const std::string& source_kind, int t_prime,
                               double acc_benign, double acc_on_source,
                               double acc_self) {
  TransferRecord r;
  r.source_kind = source_kind;
  r.t_prime = t_prime;
  r.acc_benign = acc_benign;
  r.acc_on_source = acc_on_source;
  r.acc_self = acc_self;
  const double denom = acc_benign - acc_self;
  if (denom <= 0) {
    r.valid = false;
    r.tau = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.tau = (acc_benign - acc_on_source) / denom;
  }
  return r;
}

std::vector<TransferRecord> transferability(const DynamicsModel& target,
                                            const std::vector<TransferSource>& sources,
                                            const Tensor& benign, const std::vector<int>& labels,
                                            const PgdConfig& self_cfg, uint64_t self_seed) {
  for (const auto& s : sources) {
    if (!s.batch.originals.same_shape(benign) || s.batch.originals.data != benign.data)
      throw std::invalid_argument("transferability: source originals differ from benign set");
    if (s.batch.labels != labels)
      throw std::invalid_argument("transferability: source labels differ");
  }
  const double acc_benign = benign_accuracy(target, benign, labels);
  AdversarialBatch own = pgd_attack(target, benign, labels, self_cfg, self_seed);
  const double acc_self = benign_accuracy(target, own.perturbed, labels);

  std::vector<TransferRecord> out;
  out.reserve(sources.size());
  for (const auto& s : sources) {
    const double acc_src = benign_accuracy(target, s.batch.perturbed, labels);
    out.push_back(transfer_record(s.batch.generator_tag, s.t_prime, acc_benign,
                                  acc_src, acc_self));
  }
  return out;
}

void write_transfer_csv(const std::filesystem::path& file,
                        const std::vector<TransferRecord>& records) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("transfer csv: cannot open " + file.string());
  os << "source_kind,t_prime,acc_benign,acc_on_source,acc_self,tau,valid\n";
  for (const auto& r : records)
    os << r.source_kind << ',' << r.t_prime << ',' << g17(r.acc_benign) << ','
       << g17(r.acc_on_source) << ',' << g17(r.acc_self) << ',' << g17(r.tau)
       << ',' << (r.valid ? 1 : 0) << '\n';
  if (!os) throw std::runtime_error("transfer csv: write failed");
}

}  // namespace ntk
