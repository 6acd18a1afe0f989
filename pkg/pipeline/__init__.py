# Rarefy Pipeline Package
# Schemas, oracle, losses, selection and the staged trainer.
