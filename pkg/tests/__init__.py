# 空的__init__.py文件用于将tests目录标识为Python包
