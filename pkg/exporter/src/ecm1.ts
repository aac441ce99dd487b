/**
 * Writer for the ECM1 dataset container.
 *
 * Layout: 4-byte magic "ECM1", little-endian uint32 header length, UTF-8
 * JSON header {version, d, label_names, records: [{id, label_index, T}]},
 * then each record's T x d token matrix as row-major little-endian float32,
 * concatenated in record order.
 */

export interface Ecm1Record {
  id: string;
  labelIndex: number;
  /** T rows of d values each. */
  tokenStates: number[][];
}

export function encodeEcm1(d: number, labelNames: string[], records: Ecm1Record[]): Buffer {
  const header = {
    version: 1,
    d,
    label_names: labelNames,
    records: records.map((r) => ({
      id: r.id,
      label_index: r.labelIndex,
      T: r.tokenStates.length,
    })),
  };
  const headerBytes = Buffer.from(JSON.stringify(header), "utf-8");
  const lenBytes = Buffer.alloc(4);
  lenBytes.writeUInt32LE(headerBytes.length, 0);

  const payloads: Buffer[] = [];
  for (const record of records) {
    const flat = new Float32Array(record.tokenStates.length * d);
    record.tokenStates.forEach((row, t) => {
      if (row.length !== d) {
        throw new Error(`record ${record.id}: row length ${row.length} != d ${d}`);
      }
      flat.set(row, t * d);
    });
    // Float32Array is little-endian on every platform node supports
    payloads.push(Buffer.from(flat.buffer));
  }
  return Buffer.concat([Buffer.from("ECM1", "ascii"), lenBytes, headerBytes, ...payloads]);
}
